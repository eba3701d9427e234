import json
import subprocess
import sys

import numpy as np
import pytest

from narmdd.cli import main
from narmdd.corpus_io import load_corpus, load_models, read_matrix, write_matrix
from narmdd.ctc import PosteriorGrid, greedy_decode
from narmdd.phones import default_inventory

SMALL = ["--d-feat", "6", "--d-model", "8", "--heads", "2", "--enc-layers", "1",
         "--cmlm-layers", "1", "--d-ff", "8", "--pm-d-e", "4", "--pm-d-h", "8", "--pm-d-a", "4",
         "--pm-d-f", "4", "--pm-layers", "1"]


def run(argv, capsys):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["init-model", "--seed", "4", "--out", str(root / "m.nnwt")] + SMALL) == 0
    V = len(default_inventory())
    rng = np.random.default_rng(0)
    feats, posts, mems = root / "feats", root / "posts", root / "mems"
    for d in (feats, posts, mems):
        d.mkdir()
    ids = []
    for i in range(6):
        utt = f"utt{i:05d}"
        ids.append(utt)
        T = int(rng.integers(4, 12))
        write_matrix(feats / f"{utt}.matx", rng.normal(size=(T, 6)))
        logits = rng.normal(size=(T, V)) * 3
        logits[:, 0] += 2.0
        p = np.exp(logits)
        write_matrix(posts / f"{utt}.matx", p / p.sum(axis=1, keepdims=True))
        write_matrix(mems / f"{utt}.matx", rng.normal(size=(T, 8)))
    return root, ids


def test_usage_errors(capsys, tmp_path):
    assert run([], capsys)[0] == 1
    assert run(["frobnicate"], capsys)[0] == 1
    assert run(["evaluate"], capsys)[0] == 1
    assert run(["synth", "--p-sub", "x"], capsys)[0] == 1
    assert run(["synth"], capsys)[0] == 1
    assert run(["init-model"], capsys)[0] == 1


def test_data_errors(capsys, tmp_path):
    bad = tmp_path / "bad.jsonl"
    bad.write_text('{"utt_id": "u", "canonical": ["zz"], "annotated": ["zz"]}\n')
    code, _, err = run(["evaluate", "--corpus", bad], capsys)
    assert code == 2 and "bad.jsonl:1" in err and "zz" in err
    empty = tmp_path / "empty.jsonl"
    empty.write_text("")
    assert run(["evaluate", "--corpus", empty], capsys)[0] == 2
    assert run(["evaluate", "--corpus", tmp_path / "missing.jsonl"], capsys)[0] == 2
    assert run(["synth", "--random-prompts", "2", "--p-sub", "0.8", "--p-del", "0.5"],
               capsys)[0] == 2


def test_evaluate_perfect_corpus(capsys, tmp_path):
    c = tmp_path / "c.jsonl"
    c.write_text(json.dumps({"utt_id": "u", "canonical": "aa b k", "annotated": "aa b k",
                             "hypothesis": "aa b k"}) + "\n")
    code, out, _ = run(["evaluate", "--corpus", c, "--fold", "default"], capsys)
    assert code == 0
    assert out.splitlines()[1].split()[0] == "0.00"
    code, out, _ = run(["evaluate", "--corpus", c, "--json"], capsys)
    doc = json.loads(out)
    assert doc["per"] == 0.0 and doc["cd_recall"] == 1.0 and doc["md_recall"] is None


def test_dictate_p_thr_zero_is_greedy_collapse(workspace, capsys):
    root, ids = workspace
    inv = default_inventory()
    code, out, _ = run(["dictate", "--posteriors", root / "posts" / "utt00000.matx",
                        "--weights", root / "m.nnwt", "--p-thr", "0", "--no-timing"], capsys)
    assert code == 0
    grid = PosteriorGrid.from_unnormalized(read_matrix(root / "posts" / "utt00000.matx"))
    expected = inv.decode([s.token for s in greedy_decode(grid)])
    assert json.loads(out)["hypothesis"] == expected


def test_dictate_requires_memory_when_masking(workspace, capsys):
    root, _ = workspace
    code, _, err = run(["dictate", "--posteriors", root / "posts", "--weights", root / "m.nnwt",
                        "--p-thr", "1.0"], capsys)
    assert code == 2 and "memory" in err
    assert run(["dictate", "--features", root / "feats", "--memory", root / "mems",
                "--weights", root / "m.nnwt"], capsys)[0] == 1


def test_dictate_deterministic_across_jobs(workspace, capsys):
    root, _ = workspace
    outs = []
    for jobs in (1, 4, 1):
        code, out, _ = run(["dictate", "--features", root / "feats", "--weights", root / "m.nnwt",
                            "--p-thr", "0.9", "--iters", "3", "--jobs", jobs, "--no-timing"],
                           capsys)
        assert code == 0
        outs.append(out)
    assert outs[0] == outs[1] == outs[2]
    rows = [json.loads(line) for line in outs[0].splitlines()]
    assert len(rows) == 6 and all("decode_seconds" not in r for r in rows)
    assert all(r["cmlm_passes"] <= 3 for r in rows)


def test_pipeline_synth_dictate_judge_evaluate_bench(workspace, capsys, tmp_path):
    root, ids = workspace
    corpus = tmp_path / "c.jsonl"
    assert run(["synth", "--random-prompts", 6, "--seed", 1, "--p-sub", 0.2, "--p-anti", 0.5,
                "--out", corpus], capsys)[0] == 0
    dictated = tmp_path / "d.jsonl"
    assert run(["dictate", "--features", root / "feats", "--weights", root / "m.nnwt",
                "--corpus", corpus, "--out", dictated], capsys)[0] == 0
    recs = load_corpus(dictated)
    assert all(r.hypothesis is not None and r.decode_seconds > 0 for r in recs)
    judged = tmp_path / "j.jsonl"
    assert run(["judge", "--weights", root / "m.nnwt", "--corpus", dictated, "--out", judged],
               capsys)[0] == 0
    recs = load_corpus(judged)
    assert all(len(r.judgements) == len(r.hypothesis) for r in recs)
    code, out, _ = run(["evaluate", "--corpus", judged, "--use-judgements", "--fold", "default"],
                       capsys)
    assert code == 0 and "DAR" in out and "RTF" in out
    code, out, _ = run(["bench", "--features", root / "feats", "--weights", root / "m.nnwt",
                        "--corpus", corpus, "--judge"], capsys)
    assert code == 0
    last = out.splitlines()[-1].split()
    assert last[0] == "corpus" and float(last[-1]) > 0


def test_synth_is_deterministic(capsys, tmp_path):
    prompts = tmp_path / "p.txt"
    prompts.write_text("a1\taa b k\nb2\tsh iy\n")
    outs = []
    for name in ("x.jsonl", "y.jsonl"):
        argv = ["synth", "--prompts", prompts, "--seed", 7, "--p-sub", 0.3, "--p-del", 0.1,
                "--p-ins", 0.1, "--p-anti", 0.3, "--hypothesis", "annotated",
                "--out", tmp_path / name]
        assert run(argv, capsys)[0] == 0
        outs.append((tmp_path / name).read_bytes())
    assert outs[0] == outs[1]
    recs = load_corpus(tmp_path / "x.jsonl")
    assert [r.utt_id for r in recs] == ["a1", "b2"]
    assert all(r.hypothesis == r.annotated for r in recs)


def test_init_model_contents(workspace):
    root, _ = workspace
    b = load_models(root / "m.nnwt")
    assert b.vocab == 98 and b.encoder.config.d_feat == 6 and b.pm.config.d_h == 8


def test_gradcheck_command(capsys, workspace):
    code, out, _ = run(["gradcheck", "--max-elems", 3], capsys)
    assert code == 0 and out.count("ok") == 6
    root, _ = workspace
    code, out, _ = run(["gradcheck", "--weights", root / "m.nnwt", "--max-elems", 2], capsys)
    assert code == 0, out


def test_console_script_entry_point(tmp_path):
    out = subprocess.run([sys.executable, "-m", "narmdd", "synth", "--random-prompts", "2",
                          "--seed", "3"], capture_output=True, text=True, check=True)
    assert len(out.stdout.splitlines()) == 2
    res = subprocess.run([sys.executable, "-m", "narmdd"], capture_output=True, text=True)
    assert res.returncode == 1
