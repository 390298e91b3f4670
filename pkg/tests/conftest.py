import functools

import pytest

from sid.cli import corpus_files, read_source
from sid.parser import parse_program
from sid.typecheck import TypeCheckError, check_initial


@functools.lru_cache(maxsize=None)
def program(name: str):
    return parse_program(read_source(name))


def initial_programs() -> list[str]:
    """Corpus files whose main process is an initial process."""
    names = []
    for f in corpus_files():
        prog = program(f)
        if prog.main is None:
            continue
        try:
            check_initial(prog.main_process())
        except TypeCheckError:
            continue
        names.append(f.removesuffix(".sid"))
    return names


@functools.lru_cache(maxsize=None)
def initial(name: str):
    """The annotated main process of an initial corpus program."""
    return check_initial(program(name).main_process())


@pytest.fixture
def prog():
    return program


# Lines recorded by the acceptance suite, echoed in the terminal summary so
# they survive output capturing.
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[n])
