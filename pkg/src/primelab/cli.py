"""``primelab`` command-line interface.

Exit codes: 0 success, 1 verification failure, 2 usage error, 3 I/O error.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import sys

import numpy as np

from . import BACKEND, __version__
from . import corpus, kernels, oracle, scaling, spectra, subtok, trainer, verify
from .errors import CorruptFile, PrimeLabError

EXIT_OK, EXIT_VERIFY, EXIT_USAGE, EXIT_IO = 0, 1, 2, 3


class UsageError(Exception):
    pass


class VerificationFailed(Exception):
    def __init__(self, payload):
        super().__init__("verification failed")
        self.payload = payload


# -- output helpers ------------------------------------------------------------
def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    return obj


def _csv_text(rows):
    if not rows:
        return ""
    fields = list(rows[0].keys())
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: ("" if r.get(k) is None else (json.dumps(r[k]) if isinstance(r[k], (list, dict)) else r[k])) for k in fields})
    return buf.getvalue()


def render(payload, fmt, rows=None):
    if fmt == "csv":
        if rows is None:
            rows = payload if isinstance(payload, list) else [payload]
        return _csv_text(_jsonable(rows))
    return json.dumps(_jsonable(payload), indent=2) + "\n"


def emit(args, payload, rows=None):
    text = render(payload, args.format, rows)
    if args.report:
        subtok.atomic_write_text(args.report, text)
    sys.stdout.write(text)


# -- parsing helpers -------------------------------------------------------------
def _int_list(text):
    try:
        return [int(v) for v in text.replace(" ", "").split(",") if v]
    except ValueError as exc:
        raise UsageError(f"expected comma-separated integers, got {text!r}") from exc


def _float_list(text):
    try:
        return [float(v) for v in text.replace(" ", "").split(",") if v]
    except ValueError as exc:
        raise UsageError(f"expected comma-separated numbers, got {text!r}") from exc


def _schedule(text):
    if text == "linear":
        return kernels.LINEAR
    if text.startswith("power:"):
        return kernels.Schedule.powered(float(text.split(":", 1)[1]))
    raise UsageError(f"schedule must be 'linear' or 'power:K', got {text!r}")


def _unigram(args):
    chosen = [x is not None for x in (args.probs, args.counts, args.zipf)]
    if sum(chosen) != 1:
        raise UsageError("give exactly one of --probs, --counts, --zipf")
    if args.probs is not None:
        p = np.array(_float_list(args.probs))
    elif args.counts is not None:
        p = corpus.read_frequency_tsv(args.counts).probs()
    else:
        V, _, s = args.zipf.partition(":")
        p = oracle.zipf_probs(int(V), float(s) if s else 1.0)
    if np.any(p < 0) or p.sum() <= 0:
        raise UsageError("probabilities must be non-negative and not all zero")
    return p / p.sum()


def _token_dist(args):
    p = _unigram(args)
    if args.stay is None:
        return oracle.TokenDist.product(p, args.L)
    V = p.shape[0]
    trans = args.stay * np.eye(V) + (1.0 - args.stay) * p[None, :]
    return oracle.TokenDist.markov(p, trans, args.L)


def _add_dist_args(p, with_length=True):
    p.add_argument("--probs", help="comma-separated token probabilities")
    p.add_argument("--counts", help="TSV frequency file (token_id<TAB>count)")
    p.add_argument("--zipf", help="V[:exponent] Zipf unigram")
    if with_length:
        p.add_argument("--L", type=int, default=1, help="sequence length")
        p.add_argument("--stay", type=float, default=None, help="sticky Markov chain over the unigram")


def _load_st(path):
    return subtok.Subtokenizer.load(path)


def _ids_arg(args):
    if (args.ids is None) == (args.input is None):
        raise UsageError("give exactly one of --ids or --input")
    if args.ids is not None:
        return np.array(_int_list(args.ids), dtype=np.int64)
    return np.fromiter(corpus.read_id_stream(args.input), dtype=np.int64)


# -- subtok ----------------------------------------------------------------------
def cmd_subtok_build(args):
    counts = corpus.read_frequency_tsv(args.counts, args.vocab).counts if args.counts else None
    st = subtok.build(args.vocab, args.ell, args.strategy, seed=args.seed, counts=counts)
    st.save(args.out)
    emit(args, {"path": args.out, "V": st.vocab_size, "ell": st.ell, "b": st.base, "strategy": st.strategy, "checksum": subtok.perm_checksum(st.perm)})


def cmd_subtok_encode(args):
    st = _load_st(args.st)
    codes = subtok.encode_many(st, _ids_arg(args))
    rows = [{"id": int(i), "code": [int(d) for d in c]} for i, c in zip(_ids_arg(args), codes)]
    emit(args, rows)


def cmd_subtok_decode(args):
    st = _load_st(args.st)
    if args.codes is not None:
        codes = [_int_list(c) for c in args.codes.split(";") if c]
    elif args.input is not None:
        with open(args.input, encoding="utf-8") as fh:
            codes = [_int_list(line.strip()) for line in fh if line.strip()]
    else:
        raise UsageError("give --codes or --input")
    rows = [{"code": c, "id": subtok.decode(st, c)} for c in codes]
    emit(args, rows)


def cmd_subtok_info(args):
    st = _load_st(args.st)
    doc = st.to_dict()
    doc.pop("perm")
    doc["n_codes"] = st.n_codes
    doc["unused_codes"] = st.n_codes - st.vocab_size
    emit(args, doc)


# -- kernels ---------------------------------------------------------------------
def cmd_kernels_mask(args):
    st = _load_st(args.st)
    ids = _ids_arg(args)
    grid = subtok.encode_many(st, ids)
    out = kernels.forward_mask(grid, _schedule(args.schedule), args.t, args.seed)
    rows = [{"row": i, "id": int(x), "cells": [int(v) for v in r]} for i, (x, r) in enumerate(zip(ids, out))]
    emit(args, rows)


def cmd_kernels_sample(args):
    st = _load_st(args.st)
    q = _token_dist(args)
    post = oracle.exact_posterior(q, st, args.budget)
    seeds = np.arange(args.n, dtype=np.uint64) + np.uint64(args.seed)
    tokens = kernels.sample_many(post, st, q.L, args.K, _schedule(args.schedule), seeds)
    rows = [{"sample": k, "tokens": [int(v) for v in row]} for k, row in enumerate(tokens)]
    emit(args, rows)


# -- oracle ----------------------------------------------------------------------
def cmd_oracle_verify(args):
    result = verify.run_suite(args.suite, args.budget)
    if args.format == "csv":
        emit(args, result, rows=result["checks"])
    else:
        emit(args, result)
    if result["n_failed"]:
        raise VerificationFailed([c for c in result["checks"] if not c["pass"]])


def _perm_for(args, q, ell):
    if args.perm == "identity":
        return subtok.build(q.V, ell)
    if args.perm == "random":
        return subtok.build(q.V, ell, "random", seed=args.seed)
    marg = q.probs.reshape((q.V,) * q.L).sum(axis=tuple(range(1, q.L))) if q.L > 1 else q.probs
    if args.perm == "greedy":
        return subtok.build(q.V, ell, "greedy", counts=np.round(marg * 1e12).astype(np.int64))
    best = oracle.best_assignment_bruteforce(marg, ell)
    return subtok.with_perm(q.V, ell, best["perm"])


def cmd_oracle_profile(args):
    q = _token_dist(args)
    t_grid = np.linspace(0.0, 1.0, args.points)
    rows = []
    for ell in _int_list(args.ell):
        st = _perm_for(args, q, ell)
        prof = oracle.loglik_profile(q, st, t_grid, _schedule(args.schedule), args.budget)
        rows += [{"ell": ell, "t": float(t), "loglik": float(v)} for t, v in zip(t_grid, prof)]
    emit(args, rows)


def cmd_oracle_nelbo(args):
    q = _token_dist(args)
    rows = []
    for ell in _int_list(args.ell):
        st = _perm_for(args, q, ell)
        res = oracle.optimal_nelbo(q, st, oracle.Quadrature(args.nodes), args.budget, head=args.head)
        rows.append({"ell": ell, "b": st.base, "perm": args.perm, **res, "entropy_nats": q.entropy_nats()})
    emit(args, rows)


def cmd_oracle_best_perm(args):
    p = _unigram(args)
    res = oracle.best_assignment_bruteforce(p, args.ell)
    emit(args, {"perm": [int(v) for v in res["perm"]], "avg_entropy_bits": res["avg_entropy_bits"], "total_entropy_bits": res["total_entropy_bits"]})


# -- corpus ----------------------------------------------------------------------
def cmd_corpus_count(args):
    if args.shards:
        c = corpus.count_shards([corpus.read_id_stream(p) for p in args.input], args.vocab)
    else:
        c = corpus.count_tokens(itertools_chain(corpus.read_id_stream(p) for p in args.input), args.vocab)
    if args.out:
        corpus.write_frequency_tsv(args.out, c)
    emit(args, {"V": c.V, "total": c.total, "distinct": int((c.counts > 0).sum()), "out": args.out})


def itertools_chain(iterables):
    for it in iterables:
        yield from it


def cmd_corpus_cdf(args):
    c = corpus.read_frequency_tsv(args.counts, args.vocab)
    cdf = corpus.token_cdf(c)
    rows = [{"index": k, "cdf": float(v)} for k, v in enumerate(cdf)]
    if args.format == "json":
        emit(args, {"V": c.V, "max_deviation_from_uniform": corpus.cdf_deviation(c), "cdf": [float(v) for v in cdf]})
    else:
        emit(args, rows)


def cmd_corpus_entropy(args):
    c = corpus.read_frequency_tsv(args.counts, args.vocab)
    if args.st:
        st = _load_st(args.st)
    else:
        st = subtok.build(c.V, args.ell, args.strategy, seed=args.seed, counts=c.counts if args.strategy == "greedy" else None)
    res = corpus.subtoken_entropies(c, st)
    rows = [{"position": j, "bits": float(v)} for j, v in enumerate(res["per_position"])]
    rows.append({"position": "avg", "bits": res["average"]})
    emit(args, {"strategy": st.strategy, "ell": st.ell, "b": st.base, "per_position_bits": res["per_position"], "average_bits": res["average"]}, rows)


def cmd_corpus_report(args):
    c = corpus.read_frequency_tsv(args.counts, args.vocab)
    rows = corpus.entropy_report(c, args.ell, _int_list(args.seeds))
    text = corpus.report_rows_csv(rows) if args.format == "csv" else corpus.report_json(rows)
    if args.report:
        subtok.atomic_write_text(args.report, text)
    sys.stdout.write(text)


# -- scaling ---------------------------------------------------------------------
def _fit_from_args(args):
    if args.fit:
        return scaling.read_fit_json(args.fit)
    if args.preset:
        return scaling.REFERENCE_FITS[args.preset]
    if None in (args.E, args.A, args.B, args.alpha, args.beta):
        raise UsageError("give --fit, --preset, or all of --E --A --B --alpha --beta")
    return scaling.ScalingFit(args.E, args.A, args.B, args.alpha, args.beta)


def _add_fit_args(p, full=True):
    p.add_argument("--fit", help="fit JSON written by 'scaling fit'")
    p.add_argument("--preset", choices=sorted(scaling.REFERENCE_FITS))
    for name in ("E", "A", "B"):
        p.add_argument(f"--{name}", type=float)
    p.add_argument("--alpha", type=float, help="parameter exponent alphaN")
    p.add_argument("--beta", type=float, help="data exponent betaD")


def cmd_scaling_fit(args):
    pts = scaling.read_points_csv(args.input)
    f = scaling.fit(pts)
    text = scaling.fit_json(f, pts)
    if args.out:
        subtok.atomic_write_text(args.out, text)
    emit(args, json.loads(text), rows=[{"N": p.N, "D": p.D, "loss": p.loss, "residual": r} for p, r in zip(pts, f.residuals)])


def cmd_scaling_predict(args):
    f = _fit_from_args(args)
    Ns, Ds = _float_list(args.N), _float_list(args.D)
    rows = [{"N": n, "D": d, "loss": scaling.predict_loss(f, n, d)} for n in Ns for d in Ds]
    emit(args, rows)


def cmd_scaling_optimal(args):
    f = _fit_from_args(args)
    Cs = _float_list(args.C)
    if args.iso:
        rows = scaling.iso_loss_table(f, Cs, args.iso)
    else:
        rows = []
        for C in Cs:
            a = scaling.optimal_allocation(f, C)
            rows.append({"C": C, **a, "loss": scaling.predict_loss(f, a["N_opt"], a["D_opt"])})
    emit(args, rows)


def cmd_scaling_exponents(args):
    if args.alpha is None or args.beta is None:
        f = _fit_from_args(args)
    else:
        f = scaling.ScalingFit(args.E or 0.0, args.A or 1.0, args.B or 1.0, args.alpha, args.beta)
    ex = scaling.exponents(f)
    if args.format == "json":
        emit(args, {"alphaN": f.alphaN, "betaD": f.betaD, "a_hat": round(ex["a_hat"], 4), "b_hat": round(ex["b_hat"], 4), "G": ex["G"], "a_hat_exact": ex["a_hat"], "b_hat_exact": ex["b_hat"]})
    else:
        emit(args, {"alphaN": f.alphaN, "betaD": f.betaD, "a_hat": f"{ex['a_hat']:.4f}", "b_hat": f"{ex['b_hat']:.4f}", "G": ex["G"]})


# -- train -----------------------------------------------------------------------
def _train_source(args):
    return trainer.MarkovSource(args.vocab, args.L, stay=args.stay, exponent=args.exponent)


def cmd_train_run(args):
    cfg = trainer.TrainConfig(
        V=args.vocab, ell=args.ell, L=args.L, d=args.d, h=args.h, strategy=args.strategy,
        st_seed=args.st_seed if args.strategy == "random" else None, steps=args.steps,
        batch=args.batch, lr=args.lr, seed=args.seed, t_floor=args.t_floor,
    )
    src = _train_source(args)
    out = trainer.train(cfg, src.sample, log_every=args.log_every)
    trainer.save_checkpoint(args.out, out["model"], out["subtokenizer"], cfg)
    if args.history:
        subtok.atomic_write_text(args.history, trainer.history_csv(out["history"]))
    hist = out["history"]
    emit(args, {"checkpoint": args.out, "history": args.history, "steps": cfg.steps, "first_loss": hist[0][1], "final_loss": hist[-1][1]})


def cmd_train_eval(args):
    model, st = trainer.load_checkpoint(args.checkpoint)
    if st is None:
        raise CorruptFile("checkpoint carries no subtokenizer")
    src = trainer.MarkovSource(st.vocab_size, model.L, stay=args.stay, exponent=args.exponent)
    q = src.dist() if st.vocab_size**model.L <= args.dist_limit else None
    res = trainer.eval_nelbo(model, q, st, budget=args.budget, source=src.sample, samples_per_node=args.samples, seed=args.seed)
    doc = {"nelbo": res["value"], "stderr": res["stderr"], "method": res["method"]}
    if q is not None:
        doc["entropy_nats"] = q.entropy_nats()
    emit(args, doc)


def cmd_train_gradcheck(args):
    if args.checkpoint:
        model, st = trainer.load_checkpoint(args.checkpoint)
    else:
        st = subtok.build(args.vocab, args.ell)
        model = trainer.ToyModel.init(args.L, args.ell, st.base, args.d, args.h, seed=args.seed, scale=0.5)
    src = trainer.MarkovSource(st.vocab_size, model.L, stay=args.stay)
    y0 = st.digits[src.sample(args.batch, np.random.default_rng(args.seed))]
    rows = trainer.gradcheck(model, y0, seed=args.seed, n_checks=args.checks, check_seed=args.seed)
    worst = max(r["rel_err"] for r in rows)
    payload = {"checks": rows, "max_rel_err": worst, "tolerance": args.tol, "pass": worst < args.tol}
    emit(args, payload, rows=rows)
    if worst >= args.tol:
        raise VerificationFailed(payload)


# -- spectra ---------------------------------------------------------------------
def _matrices(args):
    if (args.input is None) == (args.checkpoint is None):
        raise UsageError("give exactly one of --input or --checkpoint")
    if args.input:
        return {"matrix": spectra.read_matrix_csv(args.input)}
    mats = spectra.checkpoint_matrices(args.checkpoint)
    if args.block:
        if args.block not in mats:
            raise UsageError(f"unknown block {args.block!r}; have {', '.join(mats)}")
        mats = {args.block: mats[args.block]}
    return mats


def cmd_spectra_svd(args):
    rows = []
    for name, m in _matrices(args).items():
        rows += [{"matrix": name, "index": k, "sigma": float(s)} for k, s in enumerate(spectra.singular_values(m))]
    emit(args, rows)


def cmd_spectra_stable_rank(args):
    rows = []
    for name, m in _matrices(args).items():
        rows.append({"matrix": name, "rows": m.shape[0], "cols": m.shape[1], "stable_rank": spectra.stable_rank(m)})
    emit(args, rows)


# -- parser ----------------------------------------------------------------------
def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="seed for all randomness")
    common.add_argument("--report", default=argparse.SUPPRESS, help="also write the output to this path (atomically)")
    common.add_argument("--format", choices=("json", "csv"), default=argparse.SUPPRESS)
    common.add_argument("--budget", type=int, default=argparse.SUPPRESS, help="enumeration budget (default $PRIMELAB_BUDGET or 4096)")

    top = argparse.ArgumentParser(prog="primelab", description="Sub-token masked diffusion toolkit.", parents=[common])
    top.add_argument("--version", action="version", version=f"%(prog)s {__version__} ({BACKEND} kernels)")
    groups = top.add_subparsers(dest="group", required=True, metavar="GROUP")

    def group(name, help_):
        g = groups.add_parser(name, help=help_)
        return g.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def leaf(sub, name, func, help_):
        p = sub.add_parser(name, help=help_, parents=[common])
        p.set_defaults(func=func)
        return p

    g = group("subtok", "build and apply subtokenizers")
    p = leaf(g, "build", cmd_subtok_build, "write a subtokenizer JSON")
    p.add_argument("--vocab", type=int, required=True)
    p.add_argument("--ell", type=int, required=True)
    p.add_argument("--strategy", choices=("identity", "random", "greedy"), default="identity")
    p.add_argument("--counts", help="TSV counts for the greedy strategy")
    p.add_argument("--out", required=True)
    for name, func in (("encode", cmd_subtok_encode), ("decode", cmd_subtok_decode)):
        p = leaf(g, name, func, f"{name} ids")
        p.add_argument("--st", required=True, help="subtokenizer JSON")
        p.add_argument("--input", help="id-stream file (encode) or digit rows (decode)")
        if name == "encode":
            p.add_argument("--ids", help="comma-separated ids")
        else:
            p.add_argument("--codes", help="codes like '1,0,1;0,1,1'")
    p = leaf(g, "info", cmd_subtok_info, "describe a subtokenizer")
    p.add_argument("--st", required=True)

    g = group("kernels", "masking and sampling")
    p = leaf(g, "mask", cmd_kernels_mask, "forward-mask an encoded sequence")
    p.add_argument("--st", required=True)
    p.add_argument("--ids")
    p.add_argument("--input")
    p.add_argument("--t", type=float, required=True)
    p.add_argument("--schedule", default="linear")
    p = leaf(g, "sample", cmd_kernels_sample, "ancestral sampling with the exact posterior")
    p.add_argument("--st", required=True)
    _add_dist_args(p)
    p.add_argument("--K", type=int, default=64)
    p.add_argument("--n", type=int, default=10)
    p.add_argument("--schedule", default="linear")

    g = group("oracle", "exact enumeration checks")
    p = leaf(g, "verify", cmd_oracle_verify, "run verification suites")
    p.add_argument("--suite", default="all", choices=("all", *verify.SUITES))
    for name, func, help_ in (("profile", cmd_oracle_profile, "expected log posterior over t"), ("nelbo", cmd_oracle_nelbo, "optimal NELBO")):
        p = leaf(g, name, func, help_)
        _add_dist_args(p)
        p.add_argument("--ell", default="1", help="comma-separated granularities")
        p.add_argument("--perm", choices=("identity", "random", "greedy", "best"), default="identity")
        if name == "profile":
            p.add_argument("--points", type=int, default=11)
            p.add_argument("--schedule", default="linear")
        else:
            p.add_argument("--nodes", type=int, default=64)
            p.add_argument("--head", choices=("joint", "factorized"), default="joint")
    p = leaf(g, "best-perm", cmd_oracle_best_perm, "exhaustive entropy-maximizing perm")
    _add_dist_args(p, with_length=False)
    p.add_argument("--ell", type=int, required=True)

    g = group("corpus", "token frequency audits")
    p = leaf(g, "count", cmd_corpus_count, "histogram id-stream files")
    p.add_argument("--input", nargs="+", required=True)
    p.add_argument("--vocab", type=int, required=True)
    p.add_argument("--shards", action="store_true", help="count each file separately then merge")
    p.add_argument("--out", help="TSV output")
    for name, func in (("cdf", cmd_corpus_cdf), ("entropy", cmd_corpus_entropy), ("report", cmd_corpus_report)):
        p = leaf(g, name, func, f"token {name}")
        p.add_argument("--counts", required=True)
        p.add_argument("--vocab", type=int, default=None)
        if name == "entropy":
            p.add_argument("--st")
            p.add_argument("--ell", type=int, default=1)
            p.add_argument("--strategy", choices=("identity", "random", "greedy"), default="identity")
        if name == "report":
            p.add_argument("--ell", type=int, required=True)
            p.add_argument("--seeds", default="0,1,2")

    g = group("scaling", "power-law loss fits")
    p = leaf(g, "fit", cmd_scaling_fit, "fit N,D,loss observations")
    p.add_argument("--input", required=True)
    p.add_argument("--out")
    p = leaf(g, "predict", cmd_scaling_predict, "predicted loss on an N x D grid")
    _add_fit_args(p)
    p.add_argument("--N", required=True)
    p.add_argument("--D", required=True)
    p = leaf(g, "optimal", cmd_scaling_optimal, "compute-optimal allocation")
    _add_fit_args(p)
    p.add_argument("--C", required=True, help="comma-separated FLOP budgets")
    p.add_argument("--iso", type=int, default=0, help="emit iso-FLOP tables with this many points per budget")
    p = leaf(g, "exponents", cmd_scaling_exponents, "allocation exponents")
    _add_fit_args(p)

    g = group("train", "toy denoiser")
    p = leaf(g, "run", cmd_train_run, "train on a sticky Markov task")
    for name, default in (("vocab", 16), ("ell", 4), ("L", 4), ("d", 32), ("h", 64), ("steps", 5000), ("batch", 64), ("log-every", 1)):
        p.add_argument(f"--{name}", type=int, default=default)
    p.add_argument("--lr", type=float, default=1e-2)
    p.add_argument("--t-floor", type=float, default=1e-3)
    p.add_argument("--strategy", choices=("identity", "random"), default="identity")
    p.add_argument("--st-seed", type=int, default=0)
    p.add_argument("--stay", type=float, default=0.6)
    p.add_argument("--exponent", type=float, default=1.0)
    p.add_argument("--out", required=True, help="checkpoint JSON")
    p.add_argument("--history", help="history CSV")
    p = leaf(g, "eval", cmd_train_eval, "NELBO of a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--stay", type=float, default=0.6)
    p.add_argument("--exponent", type=float, default=1.0)
    p.add_argument("--samples", type=int, default=256, help="MC samples per quadrature node")
    p.add_argument("--dist-limit", type=int, default=1 << 16, help="largest V^L to materialize")
    p = leaf(g, "gradcheck", cmd_train_gradcheck, "finite-difference gradient check")
    p.add_argument("--checkpoint")
    for name, default in (("vocab", 16), ("ell", 4), ("L", 4), ("d", 8), ("h", 16), ("batch", 8), ("checks", 20)):
        p.add_argument(f"--{name}", type=int, default=default)
    p.add_argument("--stay", type=float, default=0.6)
    p.add_argument("--tol", type=float, default=1e-4)

    g = group("spectra", "singular values and stable rank")
    for name, func in (("svd", cmd_spectra_svd), ("stable-rank", cmd_spectra_stable_rank)):
        p = leaf(g, name, func, name)
        p.add_argument("--input", help="matrix CSV")
        p.add_argument("--checkpoint", help="trainer checkpoint")
        p.add_argument("--block", help="checkpoint block, e.g. W1 or W2[0]")
    return top


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    for name, default in (("seed", 0), ("report", None), ("format", "json"), ("budget", None)):
        if not hasattr(args, name):
            setattr(args, name, default)
    try:
        args.func(args)
    except VerificationFailed as exc:
        failing = exc.payload if isinstance(exc.payload, list) else [exc.payload]
        sys.stderr.write(json.dumps(_jsonable({"failed": failing}), indent=2) + "\n")
        return EXIT_VERIFY
    except (UsageError, KeyError) as exc:
        sys.stderr.write(f"primelab: usage error: {exc}\n")
        return EXIT_USAGE
    except (CorruptFile, OSError) as exc:
        sys.stderr.write(f"primelab: I/O error: {exc}\n")
        return EXIT_IO
    except (PrimeLabError, ValueError) as exc:
        sys.stderr.write(f"primelab: {type(exc).__name__}: {exc}\n")
        return EXIT_USAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
