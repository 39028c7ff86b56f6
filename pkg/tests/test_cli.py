import io
import json
import shutil

import httpx
import pytest

from repairgraph import cli
from repairgraph.cases import playbooks_dir, tasks_dir
from repairgraph.llm import LLMGateway, MockPlaybook
from scenarios import NAIVE_DIVIDE, fenced, repair_round

DIVIDE_PROMPT = "Please write a Python function that can divide two numbers."
TRIANGLE_PROMPT = "Write a function to calculate the area of a triangle based on its side length and height."


@pytest.fixture(autouse=True)
def isolated(tmp_path, monkeypatch):
    monkeypatch.setenv("HOME", str(tmp_path / "home"))
    for var in list(cli.os.environ):
        if var.startswith("REPAIRGRAPH_"):
            monkeypatch.delenv(var)
    monkeypatch.chdir(tmp_path)


def invoke(*argv):
    out = io.StringIO()
    code = cli.main([str(a) for a in argv], out=out)
    return code, out.getvalue()


def common(tmp_path):
    return ["--memory", tmp_path / "mem.json", "--report-dir", tmp_path / "reports"]


def test_run_triangle(tmp_path):
    code, out = invoke(
        "run", TRIANGLE_PROMPT, "--args", "[[5, 3]]", "--expected", "7.5", "--id", "triangle_area",
        "--mock", playbooks_dir() / "triangle_area.json", *common(tmp_path),
    )
    assert code == 0, out
    report = json.loads((tmp_path / "reports" / "triangle_area.json").read_text())
    assert report["status"] == "success"
    assert report["repairs_used"] == 0
    assert report["final_return"] == 7.5
    assert [s["node"] for s in report["trace"]] == ["code_generation", "code_execution"]
    assert "triangle_area(5, 3) -> 7.5" in out


def test_run_divide_narrates_the_repair(tmp_path):
    code, out = invoke(
        "run", DIVIDE_PROMPT, "--args", "[[10, 2], [10, 0]]", "--id", "divide",
        "--mock", playbooks_dir() / "divide_two_numbers.json", *common(tmp_path),
    )
    assert code == 0, out
    for fragment in ("ZeroDivisionError", "memory create", "repair #1", '"Error: Division by zero"', "repairs used: 1"):
        assert fragment in out
    report = json.loads((tmp_path / "reports" / "divide.json").read_text())
    assert report["final_return"] == "Error: Division by zero"
    assert report["memory_mutations"][0]["error_type"] == "ZeroDivisionError"


@pytest.mark.parametrize(
    "argv",
    [
        ["run", "x", "--args", "not json"],
        ["run", "x", "--args", "[1, 2]"],
        ["run", "x"],
        ["frobnicate"],
        ["run", "x", "--args", "[[1]]", "--k", "0"],
        ["run", "x", "--args", "[[1]]", "--record"],
    ],
)
def test_usage_errors_exit_64(argv, tmp_path):
    code, _ = invoke(*argv, *([] if argv == ["frobnicate"] else ["--mock", playbooks_dir() / "triangle_area.json"]))
    assert code == 64


def test_missing_playbook_is_usage_error(tmp_path):
    code, _ = invoke("run", "x", "--args", "[[1]]", "--mock", tmp_path / "missing.json", *common(tmp_path))
    assert code == 64


def test_never_fixed_exits_2(tmp_path):
    playbook = tmp_path / "stuck.json"
    entries = [("divide two numbers", fenced(NAIVE_DIVIDE))] + repair_round(NAIVE_DIVIDE)
    playbook.write_text(json.dumps(entries))
    code, out = invoke(
        "run", DIVIDE_PROMPT, "--args", "[[10, 0]]", "--max-repairs", "1", "--mock", playbook, *common(tmp_path)
    )
    assert code == 2
    assert "failed_max_repairs" in out


def test_backend_error_exits_3(tmp_path):
    playbook = tmp_path / "mute.json"
    playbook.write_text(json.dumps([("divide two numbers", "no code here")]))
    code, out = invoke("run", DIVIDE_PROMPT, "--args", "[[10, 2]]", "--mock", playbook, *common(tmp_path))
    assert code == 3
    assert "backend_error" in out


def test_batch_with_playbook_dir(tmp_path):
    code, out = invoke("batch", tasks_dir(), "--mock", playbooks_dir(), "--jobs", "2", *common(tmp_path))
    assert code == 0, out
    assert "2/2 succeeded" in out
    assert sorted(p.name for p in (tmp_path / "reports").iterdir()) == ["divide_two_numbers.json", "triangle_area.json"]


def test_batch_empty_dir(tmp_path):
    (tmp_path / "empty").mkdir()
    code, _ = invoke("batch", tmp_path / "empty", "--mock", playbooks_dir(), *common(tmp_path))
    assert code == 64


def test_batch_with_a_failing_task(tmp_path):
    corpus = tmp_path / "corpus"
    books = tmp_path / "books"
    shutil.copytree(tasks_dir(), corpus)
    shutil.copytree(playbooks_dir(), books)
    stuck = [("divide two numbers", fenced(NAIVE_DIVIDE))] + repair_round(NAIVE_DIVIDE)
    (books / "divide_two_numbers.json").write_text(json.dumps(stuck))
    code, out = invoke("batch", corpus, "--mock", books, "--max-repairs", "1", *common(tmp_path))
    assert code == 2
    assert "1/2 succeeded" in out


def test_batch_record_then_replay_cassette(tmp_path, monkeypatch):
    divide = json.loads((playbooks_dir() / "divide_two_numbers.json").read_text())["entries"]
    triangle = json.loads((playbooks_dir() / "triangle_area.json").read_text())["entries"]
    playbook = MockPlaybook.from_json({"entries": divide + triangle})

    def backend(request):
        prompt = json.loads(request.content)["messages"][-1]["content"]
        reply = playbook.respond(prompt)
        return httpx.Response(200, json={"choices": [{"message": {"role": "assistant", "content": reply}}]})

    def gateway(config, **kwargs):
        return LLMGateway(config, transport=httpx.MockTransport(backend), **kwargs)

    monkeypatch.setenv("GLM_API_KEY", "test-key")
    monkeypatch.setattr(cli, "LLMGateway", gateway)
    cassette = tmp_path / "batch.jsonl"
    code, out = invoke("batch", tasks_dir(), "--cassette", cassette, "--record", *common(tmp_path))
    assert code == 0, out
    templates = [json.loads(line)["template"] for line in cassette.read_text().splitlines()]
    assert templates == ["codegen", "bug_report", "memory_create_summary", "code_fix", "codegen"]

    monkeypatch.setattr(cli, "LLMGateway", LLMGateway)
    code, out = invoke(
        "batch", tasks_dir(), "--cassette", cassette,
        "--memory", tmp_path / "fresh.json", "--report-dir", tmp_path / "replayed",
    )
    assert code == 0, out
    first = json.loads((tmp_path / "reports" / "divide_two_numbers.json").read_text())
    again = json.loads((tmp_path / "replayed" / "divide_two_numbers.json").read_text())
    assert first["final_code"] == again["final_code"]
    assert [s["node"] for s in first["trace"]] == [s["node"] for s in again["trace"]]


def test_replay_needs_existing_cassette(tmp_path):
    code, _ = invoke("batch", tasks_dir(), "--cassette", tmp_path / "none.jsonl", *common(tmp_path))
    assert code == 64


def test_memory_commands(tmp_path):
    code, out = invoke("memory", "list", *common(tmp_path))
    assert code == 0
    assert len(out.strip().splitlines()) == 1  # header only

    invoke(
        "run", DIVIDE_PROMPT, "--args", "[[10, 2], [10, 0]]",
        "--mock", playbooks_dir() / "divide_two_numbers.json", *common(tmp_path),
    )
    code, out = invoke("memory", "list", *common(tmp_path))
    assert "ZeroDivisionError" in out

    code, out = invoke("memory", "search", "ZeroDivisionError division by zero", *common(tmp_path))
    assert code == 0
    top = out.splitlines()[0].split()
    assert top[2] == "ZeroDivisionError"
    assert float(top[0]) >= 0.35

    code, out = invoke("memory", "show", top[1], *common(tmp_path))
    assert code == 0
    assert json.loads(out)["occurrence_count"] == 1

    code, _ = invoke("memory", "show", "00000000-0000-4000-8000-000000000000", *common(tmp_path))
    assert code == 65


def test_corrupt_memory_is_data_error(tmp_path):
    (tmp_path / "mem.json").write_text("{not json")
    code, _ = invoke("memory", "list", *common(tmp_path))
    assert code == 65


def test_trace_command(tmp_path):
    invoke(
        "run", TRIANGLE_PROMPT, "--args", "[[5, 3]]", "--id", "tri",
        "--mock", playbooks_dir() / "triangle_area.json", *common(tmp_path),
    )
    code, out = invoke("trace", tmp_path / "reports" / "tri.json")
    assert code == 0
    assert "code_generation" in out and "code_execution" in out and "total" in out
    code, _ = invoke("trace", tmp_path / "nope.json")
    assert code == 65


def test_config_check(tmp_path):
    cfg = tmp_path / "config.json"
    cfg.write_text(json.dumps({"backend": {"mode": "mock"}, "memory_path": str(tmp_path / "m.json")}))
    code, out = invoke("config-check", "--config", cfg)
    assert code == 0, out
    assert "FAIL" not in out

    cfg.write_text(json.dumps({"backend": {"mode": "mock"}, "tau": 3.0}))
    code, out = invoke("config-check", "--config", cfg)
    assert code == 1
    assert "tau" in out

    code, out = invoke("config-check", "--config", tmp_path / "absent.json")
    assert code == 1


def test_config_check_live_backend_offline(tmp_path, monkeypatch):
    monkeypatch.delenv("GLM_API_KEY", raising=False)
    cfg = tmp_path / "config.json"
    cfg.write_text(json.dumps({"backend": {"base_url": "https://llm.example.invalid/v4"}}))
    code, out = invoke("config-check", "--config", cfg)
    assert code == 1
    assert "FAIL api key $GLM_API_KEY" in out
