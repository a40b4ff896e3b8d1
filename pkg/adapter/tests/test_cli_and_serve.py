import json
import socket
import threading
import time

import pytest
import requests
import uvicorn

import toy_data
from repair_adapter.cli import main
from repair_adapter.service import create_app


def free_port():
    with socket.socket() as sock:
        sock.bind(("127.0.0.1", 0))
        return sock.getsockname()[1]


@pytest.fixture(scope="module")
def checkpoints(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    pairs = root / "pairs.jsonl"
    patterns = root / "patterns.jsonl"
    toy_data.write_matcher_toy(pairs, patterns, n_pairs=10, n_train=10)
    toy_data.write_generator_toy(root / "bug_pairs.jsonl", 6, "bug")
    toy_data.write_generator_toy(root / "vul_pairs.jsonl", 6, "vul")

    assert main(["train-matcher", "--pairs", str(pairs),
                 "--patterns", str(patterns),
                 "--out", str(root / "matcher"),
                 "--epochs", "2", "--lr", "1e-3",
                 "--max-input-len", "128", "--max-output-len", "48"]) == 0
    assert main(["train-generator", "--pairs", str(root / "bug_pairs.jsonl"),
                 "--out", str(root / "gen_bug"), "--phase", "bug_fix",
                 "--epochs", "2", "--lr", "1e-3", "--max-len", "256"]) == 0
    assert main(["train-generator", "--pairs", str(root / "vul_pairs.jsonl"),
                 "--out", str(root / "gen_vul"), "--phase", "vul_fix",
                 "--parent", str(root / "gen_bug"),
                 "--epochs", "2", "--lr", "1e-3", "--max-len", "256"]) == 0
    return root


def test_cli_writes_manifests(checkpoints):
    matcher = json.loads((checkpoints / "matcher" / "manifest.json").read_text())
    assert matcher["role"] == "matcher"
    assert matcher["epochs"] == 2
    vul = json.loads((checkpoints / "gen_vul" / "manifest.json").read_text())
    assert vul["phase"] == "vul_fix"
    assert vul["parent"] == str(checkpoints / "gen_bug")


def test_cli_vul_fix_without_parent_fails(checkpoints):
    assert main(["train-generator", "--pairs",
                 str(checkpoints / "vul_pairs.jsonl"),
                 "--out", str(checkpoints / "nope"),
                 "--phase", "vul_fix", "--epochs", "1"]) == 1


def test_serve_over_real_http(checkpoints):
    app = create_app(matcher_dir=str(checkpoints / "matcher"),
                     generator_dir=str(checkpoints / "gen_vul"))
    port = free_port()
    config = uvicorn.Config(app, host="127.0.0.1", port=port,
                            log_level="error")
    server = uvicorn.Server(config)
    thread = threading.Thread(target=server.run, daemon=True)
    thread.start()
    deadline = time.monotonic() + 15
    while not server.started:
        if time.monotonic() > deadline:
            pytest.fail("server did not start")
        time.sleep(0.05)
    try:
        base = f"http://127.0.0.1:{port}"
        response = requests.post(base + "/v1/seq2seq", json={
            "cwe_id": "CWE-100", "cwe_name": "Toy Overflow",
            "code": "int fn_0(int a) { use_0(a); }",
            "beams": 4, "max_tokens": 32}, timeout=30)
        assert response.status_code == 200
        outputs = response.json()["outputs"]
        assert outputs and all("score" in o for o in outputs)
        response = requests.post(base + "/v1/complete", json={
            "prompt": "int f() {", "n": 2, "temperature": 0.0,
            "max_tokens": 16}, timeout=30)
        assert response.status_code == 200
        assert len(response.json()["outputs"]) == 2
    finally:
        server.should_exit = True
        thread.join(timeout=10)
