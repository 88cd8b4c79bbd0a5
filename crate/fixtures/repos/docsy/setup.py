from setuptools import setup

setup(name="docsy", version="0.1.0", packages=["docsy"])
