//! Minimal Dockerfile reader: logical instructions with continuations joined.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Instruction {
    /// Upper-cased keyword, e.g. `RUN`.
    pub keyword: String,
    /// Everything after the keyword, continuation lines joined with a space.
    pub args: String,
    /// Zero-based line where the instruction starts.
    pub line: usize,
}

impl Instruction {
    /// Command words for the JSON exec form (`["pytest", "-x"]`).
    pub fn exec_form(&self) -> Option<Vec<String>> {
        let trimmed = self.args.trim();
        if !trimmed.starts_with('[') {
            return None;
        }
        serde_json::from_str::<Vec<String>>(trimmed).ok()
    }

    /// The command as a single shell string, whichever form was used.
    pub fn command_text(&self) -> String {
        match self.exec_form() {
            Some(words) => words.join(" "),
            None => self.args.trim().to_string(),
        }
    }
}

pub fn parse(text: &str) -> Vec<Instruction> {
    let mut out = Vec::new();
    let mut pending: Option<(usize, String)> = None;
    for (no, raw) in text.lines().enumerate() {
        let line = raw.trim_end();
        let trimmed = line.trim_start();
        if pending.is_none() && (trimmed.is_empty() || trimmed.starts_with('#')) {
            continue;
        }
        // Comment lines inside a continuation are skipped by the engine too.
        if pending.is_some() && trimmed.starts_with('#') {
            continue;
        }
        let (continues, piece) = match trimmed.strip_suffix('\\') {
            Some(head) => (true, head.trim()),
            None => (false, trimmed),
        };
        let start = pending.get_or_insert_with(|| (no, String::new()));
        if !piece.is_empty() {
            if !start.1.is_empty() {
                start.1.push(' ');
            }
            start.1.push_str(piece);
        }
        if !continues {
            let (line, joined) = pending.take().expect("set above");
            if let Some(instr) = split_keyword(&joined, line) {
                out.push(instr);
            }
        }
    }
    if let Some((line, joined)) = pending {
        if let Some(instr) = split_keyword(&joined, line) {
            out.push(instr);
        }
    }
    out
}

fn split_keyword(joined: &str, line: usize) -> Option<Instruction> {
    let joined = joined.trim();
    if joined.is_empty() {
        return None;
    }
    let (kw, rest) = joined
        .split_once(char::is_whitespace)
        .unwrap_or((joined, ""));
    Some(Instruction {
        keyword: kw.to_ascii_uppercase(),
        args: rest.trim().to_string(),
        line,
    })
}

/// Command payloads of RUN/CMD/ENTRYPOINT instructions.
pub fn command_lines(text: &str) -> Vec<String> {
    parse(text)
        .into_iter()
        .filter(|i| matches!(i.keyword.as_str(), "RUN" | "CMD" | "ENTRYPOINT"))
        .map(|i| i.command_text())
        .filter(|c| !c.is_empty())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn joins_continuations_and_skips_comments() {
        let text = "# syntax\nFROM python:3.11\n\nRUN pip install \\\n    -r requirements.txt \\\n  # inline comment\n    && echo done\nrun pytest\n";
        let instrs = parse(text);
        assert_eq!(instrs.len(), 3);
        assert_eq!(instrs[0].keyword, "FROM");
        assert_eq!(
            instrs[1].args,
            "pip install -r requirements.txt && echo done"
        );
        assert_eq!(instrs[1].line, 3);
        assert_eq!(instrs[2].keyword, "RUN");
    }

    #[test]
    fn exec_form_commands() {
        let lines = command_lines(
            "FROM x\nCMD [\"python\", \"-m\", \"pytest\"]\nENTRYPOINT /bin/sh\nWORKDIR /app\n",
        );
        assert_eq!(lines, vec!["python -m pytest", "/bin/sh"]);
    }

    #[test]
    fn trailing_continuation_at_eof() {
        let instrs = parse("RUN echo a \\");
        assert_eq!(instrs.len(), 1);
        assert_eq!(instrs[0].args, "echo a");
    }
}
