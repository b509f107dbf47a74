"""Command-line interface: ``expjac <subcommand> ...``.

Exit codes: 0 success, 1 numerical failure, 2 I/O or usage error.
Structured output is JSON on stdout, or in the file given by ``--out-json``.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from importlib import resources
from pathlib import Path

import numpy as np

from expjac import synth
from expjac.diffops import curl_rows, jacobian
from expjac.errors import ExpJacError, NonFiniteInput, NumericalFailure
from expjac.fields import DisplacementField, read_field, read_volume, write_field, write_volume
from expjac.matexp import expm_field
from expjac.metrics import evaluate, npj_percentages
from expjac.postprocess import PostprocessConfig, postprocess

EXIT_OK, EXIT_NUMERIC, EXIT_IO = 0, 1, 2


def _ints(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(t) for t in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _floats(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(t) for t in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def load_schema(name: str) -> dict:
    """JSON schema shipped with the package, e.g. ``load_schema("lemma_check")``."""
    return json.loads(resources.files("expjac").joinpath(f"schemas/{name}.json").read_text())


def _emit(payload: dict, args) -> None:
    text = json.dumps(payload, indent=2, sort_keys=True, default=float)
    if getattr(args, "out_json", None):
        Path(args.out_json).write_text(text + "\n")
    else:
        print(text)


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------

def cmd_synth(args) -> dict:
    kind = args.kind
    shape = args.shape
    result = {"command": "synth", "kind": kind, "shape": list(shape), "seed": args.seed, "files": []}
    if kind == "sinusoidal_fold":
        amp = args.amplitude
        if args.strength is not None:
            amp = synth.fold_amplitude(args.strength, shape[0], args.frequency)
        fld, folds = synth.sinusoidal_fold(shape, amp, args.frequency, args.seed)
        result.update(amplitude=amp, frequency=args.frequency, analytic_fold_count=folds)
    elif kind == "random_smooth":
        fld = synth.random_smooth(shape, args.amplitude, args.seed, sigma=args.sigma)
        result.update(amplitude=args.amplitude)
    elif kind == "harmonic_conjugate_2d":
        fld = synth.harmonic_conjugate_2d(shape, args.pair, args.seed)
        result.update(pair=args.pair)
    elif kind == "linear":
        d = len(shape)
        A = np.asarray(args.matrix, dtype=float).reshape(d, d) if args.matrix else args.amplitude * np.eye(d)
        fld = synth.linear(shape, A)
    else:
        disp = args.translation if args.translation else args.amplitude
        pair = synth.gaussian_blob_pair(shape, disp, args.seed)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        for name in ("fixed", "moving", "fixed_labels", "moving_labels"):
            path = out / f"{name}.dfld"
            write_volume(np.asarray(getattr(pair, name), dtype=np.float64), path)
            result["files"].append(str(path))
        truth_path = out / "truth.dfld"
        write_field(DisplacementField(pair.truth), truth_path)
        result["files"].append(str(truth_path))
        return result

    write_field(fld, args.out, metadata={"generator": kind, "seed": args.seed})
    result["files"].append(str(args.out))
    npj_d, npj_t = npj_percentages(fld)
    result.update(npj_displacement_pct=npj_d, npj_transform_pct=npj_t)
    return result


def cmd_postprocess(args) -> dict:
    phi = read_field(args.input)
    cfg = PostprocessConfig(reduction=args.reduction)
    out = postprocess(phi, cfg)
    write_field(out.phi_p, args.output)
    before = npj_percentages(phi)
    after = npj_percentages(out.phi_p)
    return {
        "command": "postprocess",
        "input": str(args.input),
        "output": str(args.output),
        "loss_p": out.loss_p,
        "reduction": args.reduction,
        "npj_before": {"displacement_pct": before[0], "transform_pct": before[1]},
        "npj_after": {"displacement_pct": after[0], "transform_pct": after[1]},
        "stencil": cfg.stencil.as_dict(),
        "timings": out.timings,
    }


def cmd_metrics(args) -> dict:
    phi_p = read_field(args.phi_p)
    phi = read_field(args.phi) if args.phi else None
    fixed, _ = read_volume(args.fixed_labels)
    moving, _ = read_volume(args.moving_labels)
    report = evaluate(np.rint(fixed).astype(np.int64), np.rint(moving).astype(np.int64),
                      phi_p, phi, structures=list(args.structures) if args.structures else None)
    return {"command": "metrics", **report.to_dict()}


def lemma_levels(fields) -> list[dict]:
    levels = []
    for fld in fields:
        J = jacobian(fld)
        curl = curl_rows(expm_field(J), spacing=fld.spacing)
        inner = (slice(None),) * (curl.ndim - fld.rank) + tuple(slice(2, -2) for _ in fld.dims)
        levels.append({
            "dims": list(fld.dims),
            "spacing": list(fld.spacing),
            "residual": synth.lemma_commutation_residual(J),
            "curl_exp_max": float(np.abs(curl[inner]).max()),
        })
    return levels


def cmd_lemma_check(args) -> dict:
    if args.input:
        levels = lemma_levels([read_field(args.input)])
    else:
        levels = lemma_levels([synth.harmonic_conjugate_2d((n, n), args.pair, args.seed)
                               for n in args.sizes])
    ratios = [a["curl_exp_max"] / b["curl_exp_max"] if b["curl_exp_max"] > 0 else None
              for a, b in zip(levels, levels[1:])]
    finest = levels[-1]["residual"]
    return {
        "command": "lemma-check",
        "source": str(args.input) if args.input else f"harmonic_conjugate_2d:{args.pair}",
        "levels": levels,
        "curl_ratios": ratios,
        "residual_monotone": all(b["residual"] <= a["residual"] for a, b in zip(levels, levels[1:])),
        "threshold": args.threshold,
        "hypothesis_satisfied": bool(finest <= args.threshold),
    }


def cmd_demo_register(args) -> dict:
    from expjac.demo import DemoConfig, register

    if args.fixed and args.moving:
        fixed, _ = read_volume(args.fixed)
        moving, _ = read_volume(args.moving)
        flab = np.rint(read_volume(args.fixed_labels)[0]).astype(np.int64) if args.fixed_labels else None
        mlab = np.rint(read_volume(args.moving_labels)[0]).astype(np.int64) if args.moving_labels else None
    else:
        pair = synth.gaussian_blob_pair(args.shape, args.amplitude, args.seed)
        fixed, moving, flab, mlab = pair.fixed, pair.moving, pair.fixed_labels, pair.moving_labels
    cfg = DemoConfig(lam=args.lam, lam_p=args.lam_p, similarity=args.similarity,
                     ncc_window=args.ncc_window, steps=args.steps, lr=args.lr, seed=args.seed,
                     reduction=args.reduction)
    result = register(fixed, moving, cfg, flab, mlab)
    files = []
    if args.out_dir:
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_field(DisplacementField(result.phi), out / "phi.dfld")
        write_field(DisplacementField(result.phi_p, boundary_zero=True), out / "phi_p.dfld")
        with open(out / "trace.csv", "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(result.trace[0]))
            writer.writeheader()
            writer.writerows(result.trace)
        files = [str(out / n) for n in ("phi.dfld", "phi_p.dfld", "trace.csv")]
    return {"command": "demo-register", "files": files, **result.to_dict()}


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="expjac", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic field or image pair")
    s.add_argument("--kind", choices=synth.KINDS, required=True)
    s.add_argument("--shape", type=_ints, required=True)
    s.add_argument("--amplitude", type=float, default=1.0)
    s.add_argument("--strength", type=float, default=None,
                   help="sinusoidal_fold: amplitude * wavenumber (folds iff > 1)")
    s.add_argument("--frequency", type=float, default=1.0)
    s.add_argument("--sigma", type=float, default=2.0)
    s.add_argument("--pair", default="exp")
    s.add_argument("--matrix", type=_floats, default=None)
    s.add_argument("--translation", type=_floats, default=None)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True, help="DFLD path (directory for gaussian_blob_pair)")
    s.add_argument("--out-json")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("postprocess", help="apply the layer to a DFLD field")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--out", dest="output", required=True)
    s.add_argument("--reduction", choices=("sum", "mean"), default="sum")
    s.add_argument("--out-json")
    s.set_defaults(func=cmd_postprocess)

    s = sub.add_parser("metrics", help="Dice and non-positive Jacobian percentages")
    s.add_argument("--phi-p", required=True)
    s.add_argument("--phi")
    s.add_argument("--fixed-labels", required=True)
    s.add_argument("--moving-labels", required=True)
    s.add_argument("--structures", type=_ints)
    s.add_argument("--out-json")
    s.set_defaults(func=cmd_metrics)

    s = sub.add_parser("lemma-check", help="commutation residual and curl of expm(Jac) under refinement")
    s.add_argument("--in", dest="input")
    s.add_argument("--pair", default="exp")
    s.add_argument("--sizes", type=_ints, default=(33, 65, 129))
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--threshold", type=float, default=1e-2)
    s.add_argument("--out-json")
    s.set_defaults(func=cmd_lemma_check)

    s = sub.add_parser("demo-register", help="2D toy registration with the layer in the loop")
    s.add_argument("--fixed")
    s.add_argument("--moving")
    s.add_argument("--fixed-labels")
    s.add_argument("--moving-labels")
    s.add_argument("--shape", type=_ints, default=(64, 64))
    s.add_argument("--amplitude", type=float, default=6.0)
    s.add_argument("--lambda", dest="lam", type=float, default=1.0)
    s.add_argument("--lambda-p", dest="lam_p", type=float, default=0.01)
    s.add_argument("--similarity", choices=("mse", "ncc"), default="mse")
    s.add_argument("--ncc-window", type=int, default=9)
    s.add_argument("--steps", type=int, default=200)
    s.add_argument("--lr", type=float, default=0.1)
    s.add_argument("--reduction", choices=("sum", "mean"), default="mean")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out-dir")
    s.add_argument("--out-json")
    s.set_defaults(func=cmd_demo_register)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        payload = args.func(args)
    except (NumericalFailure, NonFiniteInput, ArithmeticError) as exc:
        print(f"expjac: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ExpJacError, OSError, ValueError) as exc:
        print(f"expjac: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_IO
    _emit(payload, args)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
