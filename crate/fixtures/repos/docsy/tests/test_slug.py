from docsy import slug


def test_basic():
    assert slug("Hello World") == "hello-world"


def test_punctuation():
    assert slug("a, b & c!") == "a-b-c"
