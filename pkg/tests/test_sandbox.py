import json
import time
from pathlib import Path

import pytest

from repairgraph.sandbox import (
    ExecutionRequest,
    HarnessFailure,
    Sandbox,
    parse_traceback,
    split_envelope,
    status_for,
)

FIXTURES = Path(__file__).parent / "fixtures"
NAIVE_DIVIDE = "def divide_two_numbers(a,b): return a/b"
TRIANGLE = "def triangle_area(base, height):\n    return base * height / 2\n"

# (source, timeout_s, status, error_type), pinned by running each program once
FAILURE_CORPUS = {
    "zero_division": ("def f():\n    return 1 / 0\n", 10, "exception", "ZeroDivisionError"),
    "index_error": ("def f():\n    items = [1, 2, 3]\n    return items[3]\n", 10, "exception", "IndexError"),
    "name_error": ("def f():\n    return undefined_name + 1\n", 10, "exception", "NameError"),
    "type_error": ("def f():\n    return 'a' + 1\n", 10, "exception", "TypeError"),
    "syntax_error": ("def f(:\n    pass\n", 10, "syntax_error", "SyntaxError"),
    "infinite_loop": ("def f():\n    while True:\n        pass\n", 2, "timeout", "Timeout"),
    "exit_code_1": ("import os\n\ndef f():\n    os._exit(1)\n", 10, "crash", "ProcessExit"),
    "deep_recursion": ("def f(n=0):\n    return f(n + 1)\n", 10, "exception", "RecursionError"),
    "custom_exception": (
        "class BudgetExceeded(Exception):\n    pass\n\ndef f():\n    raise BudgetExceeded('over budget')\n",
        10,
        "exception",
        "BudgetExceeded",
    ),
    "unicode_traceback": ("def f():\n    raise ValueError('dévision par zéro ✗ ÷')\n", 10, "exception", "ValueError"),
}


@pytest.fixture(scope="module")
def sandbox():
    return Sandbox()


def test_divide_success(sandbox):
    r = sandbox.execute(ExecutionRequest(NAIVE_DIVIDE, "divide_two_numbers", (10, 2)))
    assert r.status == "success"
    assert r.return_value == 5.0
    assert r.error is None


def test_divide_by_zero(sandbox):
    r = sandbox.execute(ExecutionRequest(NAIVE_DIVIDE, "divide_two_numbers", (10, 0)))
    assert r.status == "exception"
    assert r.error.error_type == "ZeroDivisionError"
    assert r.error.message == "division by zero"
    assert r.error.function == "divide_two_numbers"
    assert r.error.line == 1


def test_triangle_area(sandbox):
    r = sandbox.execute(ExecutionRequest(TRIANGLE, "triangle_area", (5, 3)))
    assert r.status == "success"
    assert r.return_value == 7.5


def test_module_level_infinite_loop_times_out(sandbox):
    t0 = time.monotonic()
    r = sandbox.execute(ExecutionRequest("while True: pass", "f", (), timeout_s=2))
    elapsed = time.monotonic() - t0
    assert r.status == "timeout"
    assert r.wall_ms >= 2000
    assert elapsed <= 2 + 1


@pytest.mark.parametrize("name", sorted(FAILURE_CORPUS))
def test_failure_corpus(sandbox, name):
    source, timeout, status, error_type = FAILURE_CORPUS[name]
    r = sandbox.execute(ExecutionRequest(source, "f", (), timeout_s=timeout))
    assert (r.status, r.error.error_type) == (status, error_type)


def test_unicode_message_survives(sandbox):
    source = FAILURE_CORPUS["unicode_traceback"][0]
    r = sandbox.execute(ExecutionRequest(source, "f", ()))
    assert r.error.message == "dévision par zéro ✗ ÷"
    assert "✗" in r.error.traceback_text


def test_user_output_is_captured_apart_from_envelope(sandbox):
    source = "import sys\ndef f():\n    print('hello')\n    print('oops', file=sys.stderr)\n    return [1, 2]\n"
    r = sandbox.execute(ExecutionRequest(source, "f", ()))
    assert r.status == "success"
    assert r.return_value == [1, 2]
    assert r.stdout == "hello\n"
    assert r.stderr == "oops\n"


def test_forged_envelope_without_nonce_is_ignored(sandbox):
    source = (
        "def f():\n"
        "    print('\\n<<deadbeef>>\\n{\"status\": \"success\", \"return_value\": 42}\\n<<deadbeef>>')\n"
        "    return 1 / 0\n"
    )
    r = sandbox.execute(ExecutionRequest(source, "f", ()))
    assert r.status == "exception"
    assert r.error.error_type == "ZeroDivisionError"
    assert "<<deadbeef>>" in r.stdout


def test_split_envelope_takes_last_match():
    out = "noise\n<<n1>>\n{\"a\": 1}\n<<n1>>\nmore\n<<n1>>\n{\"b\": 2}\n<<n1>>\n"
    body, rest = split_envelope(out, "n1")
    assert json.loads(body) == {"b": 2}
    assert "more" in rest


def test_missing_entry(sandbox):
    r = sandbox.execute(ExecutionRequest("def g(): return 1\n", "f", ()))
    assert (r.status, r.error.error_type) == ("exception", "EntryNotFound")


def test_unserializable_return(sandbox):
    r = sandbox.execute(ExecutionRequest("def f():\n    return object()\n", "f", ()))
    assert (r.status, r.error.error_type) == ("exception", "UnserializableReturn")


def test_nan_return_is_unserializable(sandbox):
    r = sandbox.execute(ExecutionRequest("def f():\n    return float('nan')\n", "f", ()))
    assert r.error.error_type == "UnserializableReturn"


def test_sys_exit_is_reported_as_exception(sandbox):
    r = sandbox.execute(ExecutionRequest("import sys\ndef f():\n    sys.exit(3)\n", "f", ()))
    assert (r.status, r.error.error_type) == ("exception", "SystemExit")


def test_clean_exit_without_envelope_is_harness_failure(sandbox):
    with pytest.raises(HarnessFailure):
        sandbox.execute(ExecutionRequest("import os\ndef f():\n    os._exit(0)\n", "f", ()))


def test_identical_failures_have_identical_tracebacks(sandbox):
    a = sandbox.execute(ExecutionRequest(NAIVE_DIVIDE, "divide_two_numbers", (10, 0)))
    b = sandbox.execute(ExecutionRequest(NAIVE_DIVIDE, "divide_two_numbers", (10, 0)))
    assert a.error == b.error


def test_request_validation():
    with pytest.raises(ValueError):
        ExecutionRequest("x", "", ())
    with pytest.raises(ValueError):
        ExecutionRequest("x", "f", (), timeout_s=0)


# --- parse_traceback -------------------------------------------------------------


def test_parse_pinned_zero_division_traceback():
    text = (FIXTURES / "zero_division_traceback.txt").read_text(encoding="utf-8")
    err = parse_traceback(text)
    assert (err.error_type, err.function, err.line) == ("ZeroDivisionError", "divide_two_numbers", 2)
    assert err.message == "division by zero"


def test_parse_bare_syntax_error():
    err = parse_traceback("SyntaxError: invalid syntax")
    assert err.error_type == "SyntaxError"
    assert status_for(err.error_type) == "syntax_error"


def test_parse_compile_failure_block():
    text = '  File "candidate.py", line 1\n    def f(:\n          ^\nSyntaxError: invalid syntax\n'
    err = parse_traceback(text)
    assert (err.error_type, err.line, err.message) == ("SyntaxError", 1, "invalid syntax")


def test_parse_garbage_is_unknown():
    err = parse_traceback("????")
    assert (err.error_type, err.message) == ("UnknownError", "????")


def test_parse_chained_takes_final_exception():
    text = (
        "Traceback (most recent call last):\n"
        '  File "candidate.py", line 3, in f\n'
        "    return d['k']\n"
        "KeyError: 'k'\n\n"
        "During handling of the above exception, another exception occurred:\n\n"
        "Traceback (most recent call last):\n"
        '  File "candidate.py", line 5, in f\n'
        "    raise ValueError('missing key')\n"
        "ValueError: missing key\n"
    )
    err = parse_traceback(text)
    assert (err.error_type, err.line, err.function, err.message) == ("ValueError", 5, "f", "missing key")


def test_parse_dotted_exception_name():
    text = 'Traceback (most recent call last):\n  File "m.py", line 9, in g\n    boom()\npkg.errors.Boom: bad\n'
    assert parse_traceback(text).error_type == "Boom"


def test_parse_exception_without_message():
    text = 'Traceback (most recent call last):\n  File "m.py", line 2, in f\n    raise StopIteration\nStopIteration\n'
    err = parse_traceback(text)
    assert (err.error_type, err.message) == ("StopIteration", "")
