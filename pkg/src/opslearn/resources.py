"""Access to bundled fixture files (topologies, prompts, scripts)."""

from __future__ import annotations

from importlib import resources


def fixture_path(*parts: str) -> str:
    return str(resources.files("opslearn").joinpath("fixtures", *parts))


def read_fixture(*parts: str) -> str:
    with open(fixture_path(*parts)) as fh:
        return fh.read()


def prompt_template(name: str) -> str:
    return read_fixture("prompts", f"{name}.txt")
