"""Command-line entry point: ``narmdd <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 data or validation error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from . import checks, ctc, evaluation, maskctc, pronunciation
from .corpus_io import (CorpusError, FormatError, ModelBundle, dump_records, load_corpus,
                        load_models, read_matrix, save_models)
from .nn.gradcheck import GradcheckError
from .nn.tensor import ShapeError
from .phones import (InventoryError, default_folding_path, default_inventory_path,
                     load_folding, load_inventory)
from .synth import SynthSpec, random_prompts, synth_corpus

log = logging.getLogger("narmdd")

DATA_ERRORS = (CorpusError, FormatError, InventoryError, ShapeError, GradcheckError,
               ValueError, KeyError, OSError)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _write(args, text: str) -> None:
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _inventory(args):
    return load_inventory(args.inventory or default_inventory_path())


def _matx_inputs(path: str) -> list[tuple[str, Path]]:
    p = Path(path)
    if p.is_dir():
        return [(f.stem, f) for f in sorted(p.glob("*.matx"))]
    return [(p.stem, p)]


def _decode_config(args) -> maskctc.MaskCtcConfig:
    return maskctc.MaskCtcConfig(p_thr=args.p_thr, iters=args.iters,
                                 confidence_mode=args.conf_mode)


def _make_decoder(args, bundle: ModelBundle):
    """Returns (load, decode): load reads inputs for one utt, decode runs the model."""
    config = _decode_config(args)
    if args.features:
        if bundle.encoder is None or bundle.cmlm is None:
            raise ValueError("weights lack an encoder/CMLM for --features decoding")
        src = Path(args.features)
        load = lambda utt: read_matrix(src / f"{utt}.matx" if src.is_dir() else src)
        decode = lambda feats: maskctc.dictate(feats, bundle.encoder, bundle.cmlm, config)
        return load, decode

    src = Path(args.posteriors)
    mem_src = Path(args.memory) if args.memory else None

    def load(utt):
        grid = ctc.PosteriorGrid.from_unnormalized(
            read_matrix(src / f"{utt}.matx" if src.is_dir() else src))
        memory = None
        if mem_src is not None:
            memory = read_matrix(mem_src / f"{utt}.matx" if mem_src.is_dir() else mem_src)
        return grid, memory

    def decode(item):
        grid, memory = item
        return maskctc.dictate_from_posteriors(grid, memory, bundle.cmlm, config)
    return load, decode


def _result_json(utt: str, res: maskctc.DictationResult, inv, timing: bool) -> dict:
    out = {
        "utt_id": utt,
        "hypothesis": inv.decode(res.tokens),
        "confidences": [round(c, 6) for c in res.confidences],
        "ctc_hypothesis": inv.decode(res.ctc_tokens),
        "cmlm_passes": res.cmlm_passes,
        "trace": [{"masked": s.masked, "filled": s.filled} for s in res.trace],
    }
    if timing:
        out["decode_seconds"] = res.decode_seconds
    return out


def cmd_init_model(args) -> int:
    inv = _inventory(args)
    enc, cmlm = maskctc.init_models(
        len(inv), args.seed,
        encoder=dict(d_feat=args.d_feat, d_model=args.d_model, heads=args.heads,
                     layers=args.enc_layers, d_ff=args.d_ff),
        cmlm=dict(d_model=args.d_model, heads=args.heads, layers=args.cmlm_layers,
                  d_ff=args.d_ff))
    pm = pronunciation.init_pm(len(inv), args.seed + 1, d_e=args.pm_d_e, d_h=args.pm_d_h,
                               d_a=args.pm_d_a, d_f=args.pm_d_f, heads=args.heads,
                               layers=args.pm_layers, gru_layers=args.gru_layers,
                               d_ff=2 * args.pm_d_h)
    if not args.out:
        raise UsageError("init-model needs --out")
    save_models(args.out, ModelBundle(enc, cmlm, pm))
    log.info("wrote %s", args.out)
    return 0


def _check_vocab(bundle: ModelBundle, inv) -> None:
    if bundle.vocab != len(inv):
        raise ValueError(f"weights expect {bundle.vocab} phones, inventory has {len(inv)}")


def cmd_dictate(args) -> int:
    inv = _inventory(args)
    bundle = load_models(args.weights)
    _check_vocab(bundle, inv)
    load, decode = _make_decoder(args, bundle)
    if args.corpus:
        records = load_corpus(args.corpus, inv)
        utts = [r.utt_id for r in records]
    else:
        records = None
        utts = [u for u, _ in _matx_inputs(args.features or args.posteriors)]

    def run(utt):
        return decode(load(utt))
    with ThreadPoolExecutor(max_workers=max(1, args.jobs)) as pool:
        results = list(pool.map(run, utts))

    timing = not args.no_timing
    if records is None:
        text = "".join(json.dumps(_result_json(u, r, inv, timing)) + "\n"
                       for u, r in zip(utts, results))
    else:
        for rec, res in zip(records, results):
            rec.hypothesis = inv.decode(res.tokens)
            rec.confidences = [round(c, 6) for c in res.confidences]
            rec.judgements = None
            rec.decode_seconds = res.decode_seconds if timing else None
        text = dump_records(records)
    _write(args, text)
    return 0


def _prompt(rec, inv) -> list[str]:
    return [s for s in rec.canonical if inv.kind(inv.id(s)) == "canonical"]


def cmd_judge(args) -> int:
    inv = _inventory(args)
    bundle = load_models(args.weights)
    _check_vocab(bundle, inv)
    if bundle.pm is None:
        raise ValueError("weights lack a pronunciation model")
    records = load_corpus(args.corpus, inv)
    for rec in records:
        if rec.hypothesis is None:
            raise ValueError(f"{rec.utt_id}: no hypothesis to judge")
        if not rec.hypothesis:
            rec.judgements = []
            continue
        confs = rec.confidences or [1.0] * len(rec.hypothesis)
        inp = pronunciation.PMInput(inv.encode(rec.hypothesis), confs,
                                    inv.encode(_prompt(rec, inv)))
        start = time.perf_counter()
        judged = pronunciation.pm_forward(inp, bundle.pm)
        elapsed = time.perf_counter() - start
        rec.judgements = [j.label for j in judged]
        rec.extra["judgement_probs"] = [round(j.probability, 6) for j in judged]
        if args.no_timing:
            rec.decode_seconds = None
        elif rec.decode_seconds is not None:
            rec.decode_seconds += elapsed
    _write(args, dump_records(records))
    return 0


def _fold(args, inv):
    if not args.fold:
        return None
    path = default_folding_path() if args.fold == "default" else args.fold
    return load_folding(path, inv)


def cmd_evaluate(args) -> int:
    inv = _inventory(args)
    records = load_corpus(args.corpus, inv)
    rep = evaluation.report(records, inv, _fold(args, inv), args.use_judgements,
                            args.skip_dels, args.dar_mode, args.collapse_anti)
    if args.no_timing:
        rep.rtf = rep.decode_seconds = None
    _write(args, rep.to_json() + "\n" if args.json else rep.render())
    return 0


def cmd_bench(args) -> int:
    inv = _inventory(args)
    records = load_corpus(args.corpus, inv)
    bundle = load_models(args.weights)
    _check_vocab(bundle, inv)
    if args.judge and bundle.pm is None:
        raise ValueError("--judge needs a pronunciation model in the weights")
    load, decode = _make_decoder(args, bundle)

    def run(item, rec):
        res = decode(item)
        if args.judge and res.tokens:
            inp = pronunciation.PMInput(res.tokens, res.confidences,
                                        inv.encode(_prompt(rec, inv)))
            pronunciation.pm_forward(inp, bundle.pm)
        return res

    m = evaluation.measure_rtf(records, lambda rec: load(rec.utt_id), run)
    lines = [f"{'utt_id':<16}{'audio_s':>10}{'decode_s':>12}{'RTF':>10}"]
    for utt, audio, spent in m.per_utterance:
        lines.append(f"{utt:<16}{audio:>10.3f}{spent:>12.6f}{spent / audio:>10.4f}")
    lines.append(f"{'corpus':<16}{m.audio_seconds:>10.3f}{m.decode_seconds:>12.6f}{m.rtf:>10.4f}")
    _write(args, "\n".join(lines) + "\n")
    return 0


def _read_prompts(path: str) -> list:
    prompts = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        if "\t" in line:
            utt, phones = line.split("\t", 1)
            prompts.append((utt.strip(), phones.split()))
        else:
            prompts.append(line.split())
    return prompts


def cmd_synth(args) -> int:
    inv = _inventory(args)
    if args.prompts:
        prompts = _read_prompts(args.prompts)
    elif args.random_prompts:
        prompts = random_prompts(inv, args.random_prompts, seed=args.seed)
    else:
        raise UsageError("synth needs --prompts or --random-prompts")
    spec = SynthSpec(args.p_sub, args.p_del, args.p_ins, args.p_anti, args.seed)
    corpus = synth_corpus(inv, prompts, spec, args.phone_seconds)
    if args.hypothesis != "none":
        for rec in corpus:
            rec.hypothesis = list(getattr(rec, args.hypothesis))
    _write(args, dump_records(corpus))
    return 0


def cmd_gradcheck(args) -> int:
    if args.weights:
        bundle = load_models(args.weights)
        if bundle.pm is None or bundle.cmlm is None:
            raise ValueError("gradcheck needs both a pronunciation model and a CMLM")
        pm, cmlm = bundle.pm, bundle.cmlm
    else:
        pm, cmlm = checks.toy_models(args.seed)
    errors = checks.run_all(pm, cmlm, args.seed, args.max_elems)
    worst = max(errors.values())
    lines = [f"{name:<16}{err:.3e}  {'ok' if err < checks.GRAD_TOL else 'FAIL'}"
             for name, err in errors.items()]
    _write(args, "\n".join(lines) + "\n")
    return 0 if worst < checks.GRAD_TOL else 2


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="narmdd", description="Non-autoregressive MD&D toolkit")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def common(sp, weights=False):
        sp.add_argument("--inventory", help="inventory TSV (default: bundled TIMIT 48 + anti)")
        sp.add_argument("--out", help="write results here instead of stdout")
        if weights:
            sp.add_argument("--weights", required=True, help="NNWT weight file")

    def decoding(sp):
        src = sp.add_mutually_exclusive_group(required=True)
        src.add_argument("--features", help="MATX feature file or directory")
        src.add_argument("--posteriors", help="MATX posterior file or directory")
        sp.add_argument("--memory", help="MATX encoder memory for --posteriors")
        sp.add_argument("--p-thr", type=float, default=0.5)
        sp.add_argument("--iters", type=int, default=10)
        sp.add_argument("--conf-mode", choices=ctc.CONFIDENCE_MODES, default="max")

    sp = sub.add_parser("init-model", help="write seeded random weights")
    common(sp)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--d-feat", type=int, default=80)
    sp.add_argument("--d-model", type=int, default=64)
    sp.add_argument("--heads", type=int, default=4)
    sp.add_argument("--enc-layers", type=int, default=2)
    sp.add_argument("--cmlm-layers", type=int, default=2)
    sp.add_argument("--d-ff", type=int, default=128)
    sp.add_argument("--pm-d-e", type=int, default=64)
    sp.add_argument("--pm-d-h", type=int, default=128)
    sp.add_argument("--pm-d-a", type=int, default=128)
    sp.add_argument("--pm-d-f", type=int, default=128)
    sp.add_argument("--pm-layers", type=int, default=2)
    sp.add_argument("--gru-layers", type=int, default=1)
    sp.set_defaults(func=cmd_init_model)

    sp = sub.add_parser("dictate", help="features/posteriors -> hypothesis + confidences")
    common(sp, weights=True)
    decoding(sp)
    sp.add_argument("--corpus", help="fill hypotheses into this corpus (inputs named <utt_id>.matx)")
    sp.add_argument("--jobs", type=int, default=1)
    sp.add_argument("--no-timing", action="store_true")
    sp.set_defaults(func=cmd_dictate)

    sp = sub.add_parser("judge", help="hypothesis + prompt -> judgements")
    common(sp, weights=True)
    sp.add_argument("--corpus", required=True)
    sp.add_argument("--no-timing", action="store_true")
    sp.set_defaults(func=cmd_judge)

    sp = sub.add_parser("evaluate", help="corpus -> detection/diagnosis report")
    common(sp)
    sp.add_argument("--corpus", required=True)
    sp.add_argument("--fold", help="folding TSV, or 'default' for TIMIT 48->39")
    sp.add_argument("--use-judgements", action="store_true")
    sp.add_argument("--skip-dels", action="store_true")
    sp.add_argument("--dar-mode", choices=("phone", "utterance"), default="phone")
    sp.add_argument("--collapse-anti", action="store_true",
                    help="fold every anti-phone to one mispronunciation label")
    sp.add_argument("--json", action="store_true")
    sp.add_argument("--no-timing", action="store_true")
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("bench", help="corpus -> RTF table")
    common(sp, weights=True)
    decoding(sp)
    sp.add_argument("--corpus", required=True)
    sp.add_argument("--judge", action="store_true", help="include pronunciation model time")
    sp.set_defaults(func=cmd_bench)

    sp = sub.add_parser("synth", help="prompts + error rates -> synthetic corpus")
    common(sp)
    sp.add_argument("--prompts", help="one prompt per line: [utt_id<TAB>]phone phone ...")
    sp.add_argument("--random-prompts", type=int, default=0)
    sp.add_argument("--p-sub", type=float, default=0.0)
    sp.add_argument("--p-del", type=float, default=0.0)
    sp.add_argument("--p-ins", type=float, default=0.0)
    sp.add_argument("--p-anti", type=float, default=0.0)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--phone-seconds", type=float, default=0.1)
    sp.add_argument("--hypothesis", choices=("none", "annotated", "canonical"), default="none",
                    help="also fill an oracle hypothesis")
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("gradcheck", help="central-difference gradient checks")
    common(sp)
    sp.add_argument("--weights", help="NNWT weights (default: tiny seeded models)")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--max-elems", type=int, default=None,
                    help="entries checked per parameter tensor (default: all)")
    sp.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s: %(message)s")
        if not args.command:
            raise UsageError("narmdd: a subcommand is required")
        if args.command in ("dictate", "bench") and args.memory and not args.posteriors:
            raise UsageError("--memory only applies with --posteriors")
        return args.func(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 1
    except DATA_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
