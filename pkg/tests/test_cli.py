from __future__ import annotations

import json
import threading
import time
from types import SimpleNamespace

import pytest
import uvicorn

from conftest import fast_config

from exalab import cli
from exalab.api import create_app
from exalab.orchestrator import Orchestrator

REQUEST = "Deploy iperf3 across Open5GS and verify mean throughput exceeds 50 Mbps"


def start_server(orch) -> SimpleNamespace:
    config = uvicorn.Config(create_app(orch), host="127.0.0.1", port=0, log_level="warning")
    server = uvicorn.Server(config)
    thread = threading.Thread(target=server.run, daemon=True)
    thread.start()
    deadline = time.monotonic() + 10
    while not server.started:
        if time.monotonic() > deadline:
            raise RuntimeError("server did not start")
        time.sleep(0.01)
    port = server.servers[0].sockets[0].getsockname()[1]
    return SimpleNamespace(server=server, thread=thread,
                           url=f"http://127.0.0.1:{port}")


@pytest.fixture(scope="module")
def service(tmp_path_factory):
    orch = Orchestrator(fast_config(tmp_path_factory.mktemp("cli")))
    handle = start_server(orch)
    yield handle
    handle.server.should_exit = True
    handle.thread.join(timeout=10)


def run_cli(service, *args, capsys=None):
    code = cli.main(["--url", service.url, *args])
    out = capsys.readouterr().out if capsys else ""
    return code, out


def test_submit_status_gate_results_flow(service, capsys):
    code, out = run_cli(service, "submit", REQUEST, capsys=capsys)
    assert code == 0
    body = json.loads(out)
    assert body["decision"] == "approved"
    experiment_id = body["experiment_ids"][0]

    code, out = run_cli(service, "gate", experiment_id, "--timeout-s", "30", capsys=capsys)
    assert code == cli.EXIT_PASS
    assert json.loads(out)["overall"] == "pass"

    code, out = run_cli(service, "status", experiment_id, capsys=capsys)
    assert code == 0
    assert json.loads(out)["state"] == "completed"

    code, out = run_cli(service, "results", experiment_id, capsys=capsys)
    assert code == 0
    archive = json.loads(out)
    assert len(archive["runs"]) == 2


def test_results_csv_output(service, capsys, tmp_path):
    code, out = run_cli(service, "submit", REQUEST, capsys=capsys)
    experiment_id = json.loads(out)["experiment_ids"][0]
    run_cli(service, "gate", experiment_id, "--timeout-s", "30", capsys=capsys)

    code, out = run_cli(service, "results", experiment_id, "--csv", capsys=capsys)
    assert code == 0
    lines = out.strip().splitlines()
    assert lines[0] == "t_offset_s,core,traffic,mbps"
    assert len(lines) == 1 + 240

    target = tmp_path / "samples.csv"
    code, _ = run_cli(service, "results", experiment_id, "--csv",
                      "--output", str(target), capsys=capsys)
    assert code == 0
    assert target.read_text().splitlines()[0] == "t_offset_s,core,traffic,mbps"


def test_gate_exit_codes(service, capsys):
    code, out = run_cli(
        service, "submit",
        "Deploy iperf3 across Open5GS and verify mean throughput exceeds 40000 Mbps",
        capsys=capsys,
    )
    failing_id = json.loads(out)["experiment_ids"][0]
    code, _ = run_cli(service, "gate", failing_id, "--timeout-s", "30", capsys=capsys)
    assert code == cli.EXIT_FAIL

    code, out = run_cli(service, "submit", REQUEST, capsys=capsys)
    passing_id = json.loads(out)["experiment_ids"][0]
    run_cli(service, "gate", passing_id, "--timeout-s", "30", capsys=capsys)
    # mixed set: fail dominates
    code, _ = run_cli(service, "gate", passing_id, failing_id,
                      "--timeout-s", "30", capsys=capsys)
    assert code == cli.EXIT_FAIL


def test_clarify_round_trip(service, capsys):
    code, out = run_cli(service, "submit",
                        "Deploy iperf3 across Open5GS and verify mean throughput",
                        capsys=capsys)
    assert code == 0
    token = json.loads(out)["clarification_token"]
    code, out = run_cli(service, "clarify", token, "threshold 50 Mbps", capsys=capsys)
    assert code == 0
    assert json.loads(out)["decision"] == "approved"


def test_query_and_cancel(service, capsys):
    code, out = run_cli(service, "query", "--state", "completed", capsys=capsys)
    assert code == 0
    assert len(json.loads(out)["experiments"]) >= 1

    code, out = run_cli(service, "query", "--core-name", "Open5GS", capsys=capsys)
    assert code == 0
    assert len(json.loads(out)["experiments"]) >= 1

    code, out = run_cli(service, "cancel", "exp-20990101-000001", capsys=capsys)
    assert code == cli.EXIT_ERROR  # unknown id

    code, out = run_cli(service, "status", "exp-20990101-000001", capsys=capsys)
    assert code == cli.EXIT_ERROR


def test_descriptor_download(service, capsys, tmp_path):
    code, out = run_cli(service, "submit", REQUEST, capsys=capsys)
    experiment_id = json.loads(out)["experiment_ids"][0]
    run_cli(service, "gate", experiment_id, "--timeout-s", "30", capsys=capsys)
    target = tmp_path / "experiment.exac.json"
    code, _ = run_cli(service, "status", experiment_id,
                      "--descriptor-out", str(target), capsys=capsys)
    assert code == 0
    payload = json.loads(target.read_text())
    assert payload["descriptor_id"]
