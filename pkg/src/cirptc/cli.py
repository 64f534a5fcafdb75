"""Command-line front end.

Every run writes ``config.json`` (the complete effective configuration),
its outputs, and ``summary.json`` into ``--out``.  Nothing time- or
host-dependent is written, so identical config and seed give identical bytes.

Exit codes: 0 success, 1 unexpected failure, 2 bad configuration,
3 missing input, 4 incompatible checkpoint, 5 malformed data file,
6 physically unrealizable request.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import benchmark as bm
from .circulant import BlockCirculantMatrix, circulant_extend_kernel, transpose_primary
from .demos import BLUR_3X3, SOBEL_VERTICAL, demo_image, run_kernel_demo
from .formats import (
    CheckpointVersionError,
    DatasetFormatError,
    atomic_write,
    load_checkpoint,
    load_dataset,
    rows_to_csv,
    save_checkpoint,
    to_bytes_image,
    write_pnm,
)
from .lowering import im2col
from .nn.data import synthetic_digits
from .nn.dpe import fit_gamma, fit_residual, gamma_from_tile
from .nn.model import digit_cnn, param_report
from .nn.train import TrainConfig, infer, train
from .photonics import ProfileError, load_device_profile, min_q_for_resolution, profile_to_dict
from .quant import quantize
from .sim import (
    NoiseModel,
    TileConfig,
    UnprogrammableWeight,
    build_lut,
    run_mvm_stream,
    save_lut,
)

log = logging.getLogger("cirptc")

EXIT_OK, EXIT_OTHER, EXIT_CONFIG, EXIT_MISSING, EXIT_CHECKPOINT, EXIT_DATA, EXIT_PHYSICS = range(7)
LOG_ENV = "CIRPTC_LOG_LEVEL"


class ConfigError(ValueError):
    pass


_DATA_KEYS = {
    "dataset": "synthetic",  # synthetic | idx | cifar
    "images": None,
    "labels": None,
    "n_train": 3000,
    "n_test": 1000,
    "n_classes": 10,
}

_TILE_KEYS = {"noise": True, "sigma_rel": None, "crosstalk": True, "compensation": True}

SCHEMAS = {
    "convolve": {
        "image": None,  # PGM/PPM path; None -> built-in 32x32 RGB picture
        "image_size": 32,
        "kernel": "blur",  # blur | sobel | k x k nested list
        "method": "sign_split",
        "l": 4,
        "waveform_columns": 16,
        "symbol_period_s": 80e-6,
        **_TILE_KEYS,
    },
    "train": {
        **_DATA_KEYS,
        "mode": "digital",
        "l": 4,
        "epochs": 6,
        "lr": 0.03,
        "momentum": 0.9,
        "batch_size": 64,
        "weight_decay": 0.0,
        "schedule": "cosine",
        "sigma_rel": 0.005,
        "gamma_samples": 256,
    },
    "infer": {
        **_DATA_KEYS,
        "checkpoint": None,
        "mode": "digital",  # float | digital | dpe | lookup
        "positive_class": 0,
        **_TILE_KEYS,
    },
    "fit-dpe": {
        "l": 4,
        "n_samples": 256,
        "inputs_csv": None,  # measured X, one sample per row
        "outputs_csv": None,  # measured Y
        **_TILE_KEYS,
    },
    "build-lut": {
        "l": 4,
        "weights": [[1.0, 0.0, 0.0, 0.0]],
        "subsample": None,
        **_TILE_KEYS,
    },
    "benchmark": {
        "hardware": None,  # JSON profile path; None -> shipped calibrated profile
        "overrides": {},
        "sizes": [8, 16, 32, 48, 64],
        "folds": [1, 4],
        "f_op": [10e9],
        "thermal": [True, False],
    },
    "sweep-q": {
        "sizes": list(range(2, 65)),
        "bits": list(range(1, 9)),
        "fsr": None,
        "wavelength": 1550.0,
        "lsb_fraction": 0.5,
    },
}


def _type_ok(default, value) -> bool:
    if default is None or value is None:
        return True
    if isinstance(default, bool):
        return isinstance(value, bool)
    if isinstance(default, float):
        return isinstance(value, (int, float)) and not isinstance(value, bool)
    if isinstance(default, int):
        return isinstance(value, int) and not isinstance(value, bool)
    return isinstance(value, type(default)) or (isinstance(default, str) and isinstance(value, list))


def effective_params(command: str, given: dict) -> dict:
    schema = SCHEMAS[command]
    unknown = sorted(set(given) - set(schema))
    if unknown:
        raise ConfigError(f"unknown {command} keys: {', '.join(unknown)}")
    out = {}
    for k, default in schema.items():
        v = given.get(k, default)
        if not _type_ok(default, v):
            raise ConfigError(f"{command}.{k}: expected {type(default).__name__}, got {v!r}")
        if isinstance(default, float) and v is not None:
            v = float(v)
        out[k] = v
    return out


def _read_json(path, what):
    text = Path(path).read_text()
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{what} {path} is not valid JSON: {exc}") from exc


def _parse_set(items) -> dict:
    out = {}
    for it in items or []:
        if "=" not in it:
            raise ConfigError(f"--set expects KEY=VALUE, got {it!r}")
        k, v = it.split("=", 1)
        try:
            out[k] = json.loads(v)
        except json.JSONDecodeError:
            out[k] = v
    return out


def _tile(p: dict, profile, seed: int) -> TileConfig:
    noise = NoiseModel(bool(p["noise"]), p["sigma_rel"], seed)
    return TileConfig(
        l=p.get("l", 4),
        profile=profile,
        noise=noise,
        crosstalk_on=bool(p["crosstalk"]),
        compensation=bool(p["compensation"]),
    )


def _dataset(p: dict, seed: int):
    n_train, n_test = p["n_train"], p["n_test"]
    if p["dataset"] == "synthetic":
        return synthetic_digits(n_train + n_test, seed=seed).split(n_train)
    if p["dataset"] not in ("idx", "cifar"):
        raise ConfigError(f"dataset must be synthetic, idx or cifar, got {p['dataset']!r}")
    if p["images"] is None:
        raise ConfigError("dataset.images must name a file")
    data = load_dataset(
        p["images"], p["dataset"], labels_path=p["labels"], n_classes=p["n_classes"],
        subset=n_train + n_test, shuffle_seed=seed,
    )
    return data.split(min(n_train, len(data)))


def _write_json(path, obj):
    atomic_write(path, json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n")


def _jsonable(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialise {type(o).__name__}")


# --- commands -------------------------------------------------------------------------


def cmd_convolve(p, profile, seed, out: Path) -> dict:
    if p["image"] is None:
        img = demo_image(p["image_size"], 3, seed=seed)
    else:
        img = load_dataset(p["image"], "pnm", n_classes=1).x[0]
    if isinstance(p["kernel"], list):
        kernel = np.asarray(p["kernel"], dtype=float)
        if kernel.ndim != 2 or kernel.shape[0] != kernel.shape[1]:
            raise ConfigError("kernel must be a square nested list")
    elif p["kernel"] in ("blur", "sobel"):
        kernel = BLUR_3X3 if p["kernel"] == "blur" else SOBEL_VERTICAL
    else:
        raise ConfigError(f"kernel must be blur, sobel or a nested list, got {p['kernel']!r}")
    if p["method"] not in ("sign_split", "bias_reference"):
        raise ConfigError("method must be sign_split or bias_reference")
    cfg = _tile(p, profile, seed)
    res = run_kernel_demo(img, kernel, cfg, p["method"])
    signed = bool(np.any(kernel < 0))
    lo, hi = (-res.full_scale if signed else 0.0), res.full_scale

    def save(name, arr):
        b = to_bytes_image(arr, lo, hi)
        write_pnm(out / name, b[0] if b.shape[0] == 1 else b)

    xq = quantize(img, cfg.xq)
    b = to_bytes_image(xq)
    write_pnm(out / "input.pnm", b[0] if b.shape[0] == 1 else b)
    save("simulated.pnm", res.simulated)
    save("reference.pnm", res.reference)
    save("ideal.pnm", res.ideal)

    # waveform: the first columns of the first channel streamed through the magnitude kernel
    k = kernel.shape[0]
    Wext, t = circulant_extend_kernel(np.abs(kernel).ravel() / np.abs(kernel).max(), cfg.l)
    WT = BlockCirculantMatrix(np.stack([transpose_primary(q) for q in Wext.primary[:, 0]])[None])
    cols = im2col(xq[:1], k)[:, : p["waveform_columns"]]
    X = np.zeros((WT.N, cols.shape[1]))
    X[: cols.shape[0]] = cols
    stream = run_mvm_stream(WT, X, cfg, p["symbol_period_s"])
    atomic_write(out / "waveform.csv", stream.to_csv())

    sim_b = to_bytes_image(res.simulated, lo, hi).astype(int)
    ref_b = to_bytes_image(res.reference, lo, hi).astype(int)
    return {
        "normalized_rmse": res.rmse,
        "output_shape": list(res.simulated.shape),
        "im2col_shape": list(im2col(img, k, shared_channels=True).shape),
        "max_byte_diff_vs_reference": int(np.abs(sim_b - ref_b).max()),
        "target_port": int(t),
        "symbol_rate_baud": stream.rate_baud,
    }


def cmd_train(p, profile, seed, out: Path) -> dict:
    tr, te = _dataset(p, seed)
    try:
        tc = TrainConfig(
            mode=p["mode"], lr=p["lr"], momentum=p["momentum"], batch_size=p["batch_size"],
            epochs=p["epochs"], seed=seed, weight_decay=p["weight_decay"], schedule=p["schedule"],
            sigma_rel=p["sigma_rel"] if p["mode"] == "dpe" else 0.0,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    gamma = None
    if tc.mode == "dpe":
        tile = TileConfig(l=p["l"], profile=profile)
        gamma = gamma_from_tile(tile, p["gamma_samples"], seed).gamma
    if tr.x.shape[1:] != (1, 28, 28):
        raise ConfigError(f"the digit network takes 1x28x28 inputs, data has {tr.x.shape[1:]}")
    model = digit_cnn(p["l"], seed, n_classes=tr.n_classes)
    hist = train(model, tr, tc, gamma=gamma)
    rows = [(h["epoch"], h["loss"], h["accuracy"]) for h in hist]
    atomic_write(out / "history.csv", rows_to_csv(["epoch", "loss", "accuracy"], rows))
    meta = {"l": p["l"], "mode": tc.mode, "gamma": None if gamma is None else gamma.tolist()}
    rng = np.random.default_rng(seed)
    save_checkpoint(out / "model.ckpt", model, meta, rng.bit_generator.state)
    res = infer(model, te, "digital") if len(te) else {"accuracy": None}
    return {
        "final_train_loss": hist[-1]["loss"],
        "final_train_accuracy": hist[-1]["accuracy"],
        "test_accuracy": res["accuracy"],
        "params": param_report(model),
    }


def cmd_infer(p, profile, seed, out: Path) -> dict:
    if p["checkpoint"] is None:
        raise ConfigError("infer needs a checkpoint path")
    model, meta, _ = load_checkpoint(p["checkpoint"])
    _, te = _dataset(p, seed)
    mode = p["mode"]
    if mode not in ("float", "digital", "dpe", "lookup"):
        raise ConfigError(f"unknown inference mode {mode!r}")
    gamma = None
    if mode == "dpe":
        if meta.get("gamma") is None:
            gamma = gamma_from_tile(_tile(dict(p, noise=False, l=meta["l"]), profile, seed)).gamma
        else:
            gamma = np.asarray(meta["gamma"])
    tile = _tile(dict(p, l=meta["l"]), profile, seed) if mode == "lookup" else None
    res = infer(model, te, mode, gamma=gamma, tile=tile, positive_class=p["positive_class"])
    rows = [(i, int(a), int(b)) for i, (a, b) in enumerate(zip(te.y, res["predictions"]))]
    atomic_write(out / "predictions.csv", rows_to_csv(["index", "label", "prediction"], rows))
    C = res["confusion"]
    atomic_write(
        out / "confusion.csv",
        rows_to_csv(["true"] + [f"pred_{j}" for j in range(C.shape[1])], [[i, *C[i]] for i in range(len(C))]),
    )
    return {k: res[k] for k in ("accuracy", "sensitivity", "specificity")} | {"n": len(te)}


def _read_matrix_csv(path):
    return np.loadtxt(path, delimiter=",", ndmin=2)


def cmd_fit_dpe(p, profile, seed, out: Path) -> dict:
    if (p["inputs_csv"] is None) != (p["outputs_csv"] is None):
        raise ConfigError("inputs_csv and outputs_csv go together")
    if p["inputs_csv"] is not None:
        X, Y = _read_matrix_csv(p["inputs_csv"]), _read_matrix_csv(p["outputs_csv"])
        est = fit_gamma(X, Y)
    else:
        X = Y = None
        est = gamma_from_tile(_tile(dict(p, noise=False), profile, seed), p["n_samples"], seed)
    G = est.gamma
    atomic_write(out / "gamma.csv", rows_to_csv([f"c{j}" for j in range(G.shape[1])], G.tolist()))
    summary = {"residual": est.residual, "rank": est.rank, "condition": est.condition, "samples": est.samples}
    if X is not None:
        summary["identity_residual"] = fit_residual(np.eye(G.shape[0]), X, Y)
    return summary


def cmd_build_lut(p, profile, seed, out: Path) -> dict:
    cfg = _tile(p, profile, seed)
    try:
        lut = build_lut(cfg, p["weights"], subsample=p["subsample"], seed=seed)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    save_lut(lut, out / "lut.bin")
    return {"blocks": int(lut.weight_codes.shape[0]), "rows_per_block": lut.entries_per_block}


def cmd_benchmark(p, profile, seed, out: Path) -> dict:
    try:
        hw = bm.load_hardware_profile(p["hardware"])
        if p["overrides"]:
            hw = bm.hardware_from_dict(bm.hardware_to_dict(hw) | p["overrides"])
    except (TypeError, ValueError) as exc:
        if isinstance(exc, bm.AdcRangeError):
            raise
        raise ConfigError(str(exc)) from exc
    rows = bm.sweep(hw, p["sizes"], p["folds"], p["f_op"], p["thermal"])
    atomic_write(out / "sweep.csv", bm.sweep_csv(rows))
    pb = bm.power_breakdown(hw)
    comp = [(k, getattr(pb, k), pb.fractions[k]) for k in pb.COMPONENTS]
    atomic_write(out / "breakdown.csv", rows_to_csv(["component", "watts", "fraction"], comp))
    _write_json(out / "hardware.json", bm.hardware_to_dict(hw))
    rep = bm.report(hw)
    rep["efficiency_by_size"] = {str(k): v for k, v in rep["efficiency_by_size"].items()}
    return rep


def cmd_sweep_q(p, profile, seed, out: Path) -> dict:
    rows = []
    for n in p["sizes"]:
        for b in p["bits"]:
            q = min_q_for_resolution(n, b, p["fsr"], p["wavelength"], lsb_fraction=p["lsb_fraction"])
            rows.append((n, b, q))
    atomic_write(out / "q.csv", rows_to_csv(["N", "bits", "min_q"], rows))
    ref = min_q_for_resolution(48, 6, p["fsr"], p["wavelength"], lsb_fraction=p["lsb_fraction"])
    return {"min_q_48_6bit": ref, "points": len(rows)}


COMMANDS = {
    "convolve": cmd_convolve,
    "train": cmd_train,
    "infer": cmd_infer,
    "fit-dpe": cmd_fit_dpe,
    "build-lut": cmd_build_lut,
    "benchmark": cmd_benchmark,
    "sweep-q": cmd_sweep_q,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cirptc", description=__doc__.split("\n")[0])
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="JSON object of command parameters")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("--profile", help="device profile JSON (default: shipped profile)")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one parameter")
    return ap


def run(argv=None) -> int:
    logging.basicConfig(level=os.environ.get(LOG_ENV, "WARNING").upper(), format="%(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    try:
        if not 0 <= args.seed < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        given = {}
        if args.config:
            given = _read_json(args.config, "config")
            if not isinstance(given, dict):
                raise ConfigError("config must be a JSON object")
        given.update(_parse_set(args.set))
        params = effective_params(args.command, given)
        profile = load_device_profile(args.profile)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        effective = {
            "command": args.command,
            "seed": args.seed,
            "params": params,
            "profile": profile_to_dict(profile),
        }
        _write_json(out / "config.json", effective)
        log.info("running %s into %s", args.command, out)
        summary = COMMANDS[args.command](params, profile, args.seed, out)
        _write_json(out / "summary.json", {"command": args.command, "seed": args.seed, **summary})
        return EXIT_OK
    except (ConfigError, ProfileError) as exc:
        log.error("configuration error: %s", exc)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        log.error("missing input: %s", exc)
        return EXIT_MISSING
    except CheckpointVersionError as exc:
        log.error("%s", exc)
        return EXIT_CHECKPOINT
    except DatasetFormatError as exc:
        log.error("data format error: %s", exc)
        return EXIT_DATA
    except (UnprogrammableWeight, bm.AdcRangeError) as exc:
        log.error("physically unrealizable: %s", exc)
        return EXIT_PHYSICS
    except Exception as exc:  # noqa: BLE001
        log.exception("failed: %s", exc)
        return EXIT_OTHER


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
