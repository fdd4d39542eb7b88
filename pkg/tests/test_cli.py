import json
import shutil
import subprocess
import sys

import pytest

from primelab import scaling

EXE = shutil.which("primelab")
BASE = [EXE] if EXE else [sys.executable, "-m", "primelab"]


def run(*args, cwd, env=None):
    return subprocess.run(BASE + [str(a) for a in args], cwd=cwd, capture_output=True, text=True, env=env)


def ok(*args, cwd):
    r = run(*args, cwd=cwd)
    assert r.returncode == 0, r.stderr
    return r.stdout


@pytest.fixture
def work(tmp_path):
    (tmp_path / "ids.txt").write_text("0\n0\n0\n1\n")
    (tmp_path / "ids2.txt").write_text("3\n")
    (tmp_path / "pts.csv").write_text(scaling.points_csv(scaling.synthetic_points(scaling.REFERENCE_FITS["prime-v2"])))
    (tmp_path / "m.csv").write_text("2,0,0\n0,1,0\n0,0,1\n")
    return tmp_path


def test_subtok_commands(work):
    out = json.loads(ok("subtok", "build", "--vocab", 8, "--ell", 3, "--strategy", "random", "--seed", 42, "--out", "st.json", cwd=work))
    assert out["checksum"] == "f18a8f7d45014fa5"
    doc = json.loads((work / "st.json").read_text())
    assert doc["perm"] == [3, 1, 6, 2, 4, 0, 7, 5]
    enc = json.loads(ok("subtok", "encode", "--st", "st.json", "--ids", "0,5,7", cwd=work))
    assert [r["code"] for r in enc] == [[0, 1, 1], [0, 0, 0], [1, 0, 1]]
    dec = json.loads(ok("subtok", "decode", "--st", "st.json", "--codes", "0,1,1;1,0,1", cwd=work))
    assert [r["id"] for r in dec] == [0, 7]
    info = json.loads(ok("subtok", "info", "--st", "st.json", cwd=work))
    assert info["b"] == 2 and info["unused_codes"] == 0


def test_kernels_commands(work):
    ok("subtok", "build", "--vocab", 8, "--ell", 3, "--out", "st.json", cwd=work)
    m = json.loads(ok("kernels", "mask", "--st", "st.json", "--ids", "0,5,7", "--t", 1.0, "--seed", 1, cwd=work))
    assert all(c == -1 for r in m for c in r["cells"])
    m = json.loads(ok("kernels", "mask", "--st", "st.json", "--ids", "5", "--t", 0.0, cwd=work))
    assert m[0]["cells"] == [1, 0, 1]
    s = json.loads(ok("kernels", "sample", "--st", "st.json", "--zipf", "8", "--K", 16, "--n", 5, "--seed", 2, cwd=work))
    assert len(s) == 5 and all(0 <= t < 8 for r in s for t in r["tokens"])


def test_oracle_verify_all(work):
    r = run("oracle", "verify", "--suite", "all", "--budget", 4096, "--report", "out.json", cwd=work)
    assert r.returncode == 0, r.stderr
    doc = json.loads((work / "out.json").read_text())
    assert doc["n_checks"] > 500 and doc["n_failed"] == 0
    assert all(c["pass"] for c in doc["checks"])


def test_oracle_other_commands(work):
    prof = ok("oracle", "profile", "--zipf", "4", "--ell", "1,2", "--points", 3, "--format", "csv", cwd=work)
    lines = prof.strip().split("\n")
    assert lines[0] == "ell,t,loglik" and len(lines) == 7
    nel = json.loads(ok("oracle", "nelbo", "--zipf", "8", "--ell", "1,3", "--perm", "best", cwd=work))
    assert nel[1]["value"] == pytest.approx(1.701978744577378, abs=1e-12)
    bp = json.loads(ok("oracle", "best-perm", "--probs", "0.4,0.3,0.2,0.1", "--ell", 2, cwd=work))
    assert bp["avg_entropy_bits"] == pytest.approx(0.98548, abs=1e-5)


def test_oracle_budget_env(work):
    import os

    env = dict(os.environ, PRIMELAB_BUDGET="4")
    r = run("oracle", "nelbo", "--zipf", "8", "--ell", "3", cwd=work, env=env)
    assert r.returncode == 2 and "Budget" in r.stderr


def test_corpus_commands(work):
    ok("corpus", "count", "--input", "ids.txt", "ids2.txt", "--vocab", 4, "--shards", "--out", "c.tsv", cwd=work)
    assert (work / "c.tsv").read_text() == "0\t3\n1\t1\n3\t1\n"
    cdf = ok("corpus", "cdf", "--counts", "c.tsv", "--format", "csv", cwd=work)
    assert cdf.strip().split("\n")[1:] == ["0,0.6", "1,0.8", "2,0.8", "3,1.0"]
    ent = json.loads(ok("corpus", "entropy", "--counts", "c.tsv", "--ell", 2, cwd=work))
    assert len(ent["per_position_bits"]) == 2
    rep = ok("corpus", "report", "--counts", "c.tsv", "--ell", 2, "--seeds", "0,1", "--format", "csv", cwd=work)
    assert rep.split("\n")[0] == "strategy,seed,position,bits"
    r = run("corpus", "count", "--input", "ids.txt", "--vocab", 1, cwd=work)
    assert r.returncode == 2 and "position 3" in r.stderr


def test_scaling_commands(work):
    out = json.loads(ok("scaling", "fit", "--input", "pts.csv", "--out", "fit.json", cwd=work))
    assert out["alphaN"] == pytest.approx(0.37, abs=1e-6)
    pred = json.loads(ok("scaling", "predict", "--fit", "fit.json", "--N", "1.028e9", "--D", "5.4e11", cwd=work))
    assert pred[0]["loss"] == pytest.approx(1.841345960872076, rel=1e-6)
    opt = json.loads(ok("scaling", "optimal", "--preset", "prime-v2", "--C", "1e21,1e22", cwd=work))
    for row in opt:
        assert row["N_opt"] * row["D_opt"] == pytest.approx(row["C"] / 6, rel=1e-12)
    iso = ok("scaling", "optimal", "--preset", "prime-v2", "--C", "1e21", "--iso", 5, "--format", "csv", cwd=work)
    assert iso.split("\n")[0] == "C,N,D,loss" and len(iso.strip().split("\n")) == 6
    exps = json.loads(ok("scaling", "exponents", "--alpha", 0.37, "--beta", 0.26, cwd=work))
    assert exps["a_hat"] == 0.4127 and exps["b_hat"] == 0.5873


def test_train_and_spectra_commands(work):
    args = ("train", "run", "--vocab", 8, "--ell", 3, "--L", 2, "--steps", 30, "--d", 6, "--h", 6, "--seed", 1)
    ok(*args, "--out", "ck.json", "--history", "h.csv", cwd=work)
    assert (work / "h.csv").read_text().startswith("step,loss\n0,")
    ev = json.loads(ok("train", "eval", "--checkpoint", "ck.json", "--seed", 1, cwd=work))
    assert ev["method"] == "exact" and ev["nelbo"] >= ev["entropy_nats"] - 1e-8
    gc = json.loads(ok("train", "gradcheck", "--checkpoint", "ck.json", "--seed", 1, cwd=work))
    assert gc["pass"] and gc["max_rel_err"] < 1e-4
    r = run("train", "gradcheck", "--seed", 1, "--tol", 0, cwd=work)
    assert r.returncode == 1 and "failed" in r.stderr
    sv = json.loads(ok("spectra", "svd", "--checkpoint", "ck.json", "--block", "W1", cwd=work))
    assert len(sv) == 6
    sr = json.loads(ok("spectra", "stable-rank", "--input", "m.csv", cwd=work))
    assert sr[0]["stable_rank"] == pytest.approx(1.5, abs=1e-12)
    sr = json.loads(ok("spectra", "stable-rank", "--checkpoint", "ck.json", cwd=work))
    assert {r["matrix"] for r in sr} == {"W1", "W2[0]", "W2[1]", "W2[2]"}


def test_exit_codes(work):
    r = run("subtok", "build", "--vocab", 8, cwd=work)
    assert r.returncode == 2 and r.stderr
    r = run("subtok", "build", "--vocab", 8, "--ell", 4, "--out", "x.json", cwd=work)
    assert r.returncode == 2 and "GranularityTooLarge" in r.stderr
    r = run("corpus", "cdf", "--counts", "missing.tsv", cwd=work)
    assert r.returncode == 3 and r.stderr
    (work / "bad.tsv").write_text("2\t1\n1\t1\n")
    r = run("corpus", "cdf", "--counts", "bad.tsv", cwd=work)
    assert r.returncode == 3 and "increasing" in r.stderr
    r = run("nonsense", cwd=work)
    assert r.returncode == 2


def test_idempotent_outputs(work):
    for k in (1, 2):
        ok("subtok", "build", "--vocab", 50, "--ell", 2, "--strategy", "random", "--seed", 7, "--out", f"s{k}.json", cwd=work)
        ok("kernels", "sample", "--st", f"s{k}.json", "--zipf", "50", "--L", 2, "--K", 8, "--n", 4, "--seed", 3, "--report", f"r{k}.json", cwd=work)
        ok("train", "run", "--vocab", 8, "--ell", 3, "--L", 2, "--steps", 20, "--d", 4, "--h", 4, "--out", f"c{k}.json", cwd=work)
    for name in ("s", "r", "c"):
        assert (work / f"{name}1.json").read_bytes() == (work / f"{name}2.json").read_bytes()
    assert not list(work.glob("*.tmp*"))
