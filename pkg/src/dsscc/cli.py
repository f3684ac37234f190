"""Command-line entry points.

Configs are JSON files; see README for the key set. Report paths emit
delimited data (CSV/JSON) plus rendered PNG figures next to them.
"""

import json
import os
import sys

import click
import numpy as np

from . import checkpoint as ckpt
from .channel import ChannelConfig, ber_sweep, transmit
from .codec import CodecConfig, CodecModel
from .dataset import ensure_dataset, load_cifar10, load_image, save_image, save_pgm
from .entropy import bit_allocation_map
from .pipeline import ExperimentConfig, decode_container, encode_image, run_experiment
from .theory import run_campaign
from .training import TrainConfig, end_to_end, iterate, write_log_csv


def _read_json(path):
    with open(path) as f:
        return json.load(f)


def _load_model(codec_cfg, checkpoint):
    model = CodecModel(codec_cfg)
    if checkpoint:
        ckpt.load_model(checkpoint, model)
    return model


@click.group()
def main():
    """Learned image codec with channel simulation and semantic training."""


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True),
              help="JSON with 'codec', 'train' and 'dataset' sections.")
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--end-to-end", "e2e", is_flag=True,
              help="Single-loop baseline instead of the two-step trainer.")
@click.option("--resume", type=click.Path(exists=True), default=None,
              help="Checkpoint to resume the iterative trainer from.")
def train(config_path, out_dir, e2e, resume):
    """Train codec + classifier on (real or synthetic) CIFAR-format data."""
    raw = _read_json(config_path)
    codec_cfg = CodecConfig.from_dict(raw.get("codec", {}))
    train_cfg = TrainConfig.from_dict(raw.get("train", {}))
    ds = raw.get("dataset", {})
    images, labels = ensure_dataset(ds.get("path"), ds.get("n_images", 1024),
                                    seed=ds.get("synthetic_seed", 0))
    os.makedirs(out_dir, exist_ok=True)
    model = CodecModel(codec_cfg)

    def hook(row):
        click.echo(f"iter {row['iteration']} step {row['step']} epoch {row['epoch']}"
                   f" total {row['total']:.3f}")

    if e2e:
        rows = end_to_end(model, images, labels, train_cfg, out_dir=out_dir)
    else:
        rows = iterate(model, images, labels, train_cfg, out_dir=out_dir,
                       resume_from=resume, log_hook=hook)
    ckpt.save_model(os.path.join(out_dir, "model.dsckpt"), model)
    write_log_csv(os.path.join(out_dir, "training_log.csv"), rows)
    from . import plots
    plots.save_loss_curves(rows, os.path.join(out_dir, "loss_curves.png"))
    click.echo(f"saved model + log under {out_dir}")


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--checkpoint", required=True, type=click.Path(exists=True))
@click.option("--input", "input_path", required=True, type=click.Path(exists=True),
              help="PNG/PPM image, or a CIFAR .bin with --index.")
@click.option("--index", default=None, type=int)
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--bit-map", "bit_map", default=None, type=click.Path(),
              help="Also write the per-pixel bit-allocation map (PGM).")
def encode(config_path, checkpoint, input_path, index, out_path, bit_map):
    """Compress one image into a .dscc bitstream."""
    codec_cfg = CodecConfig.from_dict(_read_json(config_path).get("codec", {}))
    model = _load_model(codec_cfg, checkpoint)
    if index is not None:
        images, _ = load_cifar10(input_path)
        image = images[index]
    else:
        image = load_image(input_path)
    enc = encode_image(model, image)
    with open(out_path, "wb") as f:
        f.write(enc.container)
    if bit_map:
        grid = bit_allocation_map(enc.y_sym, enc.sigma,
                                  sigma_floor=codec_cfg.sigma_floor)
        save_pgm(bit_map, grid)
    click.echo(f"payload {enc.payload_bits} bits "
               f"(model estimate {enc.bits_y_model + enc.bits_z_model:.1f})")


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--checkpoint", required=True, type=click.Path(exists=True))
@click.option("--input", "input_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
def decode(config_path, checkpoint, input_path, out_path):
    """Reconstruct an image from a .dscc bitstream."""
    codec_cfg = CodecConfig.from_dict(_read_json(config_path).get("codec", {}))
    model = _load_model(codec_cfg, checkpoint)
    with open(input_path, "rb") as f:
        blob = f.read()
    dec = decode_container(model, blob)
    save_image(out_path, np.round(dec.image))
    probs = model.classify(dec.image)
    click.echo(f"predicted label {int(np.argmax(probs))}")


@main.command()
@click.option("--input", "input_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--mode", type=click.Choice(["ideal_capacity", "ldpc_16qam"]),
              default="ideal_capacity")
@click.option("--snr", default=10.0, type=float)
@click.option("--seed", default=0, type=int)
@click.option("--channel-uses", default=None, type=int,
              help="Ideal mode: explicit symbol budget L for the gate.")
def transmit_cmd(input_path, out_path, mode, snr, seed, channel_uses):
    """Push a .dscc bitstream through the simulated channel."""
    with open(input_path, "rb") as f:
        blob = f.read()
    cfg = ChannelConfig(mode=mode, snr_db=snr, seed=seed, channel_uses=channel_uses)
    result = transmit(blob, cfg)
    click.echo(f"status={result.status} channel_uses={result.channel_uses} "
               f"bit_errors={result.bit_errors}")
    if result.status == "ok":
        with open(out_path, "wb") as f:
            f.write(result.payload)
    else:
        sys.exit(2)


main.add_command(transmit_cmd, name="transmit")


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True),
              help="Experiment JSON (codec/channel/dataset/checkpoint/out_dir).")
def evaluate(config_path):
    """Run the full per-image pipeline and emit metrics CSV + summary."""
    excfg = ExperimentConfig.from_file(config_path)
    _, summary = run_experiment(excfg)
    click.echo(json.dumps(summary, indent=2, sort_keys=True))


@main.command(name="theory-check")
@click.option("--models", default=1000, type=int)
@click.option("--surrogates", default=500, type=int)
@click.option("--seed", default=0, type=int)
@click.option("--out", "out_dir", default="theory_report", type=click.Path())
def theory_check(models, surrogates, seed, out_dir):
    """Monte-Carlo verification of the variational bound (JSON report)."""
    report = run_campaign(models, surrogates, seed=seed)
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "report.json"), "w") as f:
        json.dump(report, f, indent=2, sort_keys=True)
    from . import plots
    plots.save_theory_gaps(report["gaps"], os.path.join(out_dir, "gaps.png"))
    click.echo(f"passed={report['passed']} gap_min={report['gap_min']:.3e}")
    if not report["passed"]:
        sys.exit(1)


@main.command(name="ber-sweep")
@click.option("--snrs", default="0:16:2", help="start:stop:step in dB, or comma list.")
@click.option("--min-bits", default=1_000_000, type=int)
@click.option("--seed", default=0, type=int)
@click.option("--max-iters", default=50, type=int)
@click.option("--out", "out_dir", default="ber_report", type=click.Path())
def ber_sweep_cmd(snrs, min_bits, seed, max_iters, out_dir):
    """Monte-Carlo BER of the LDPC + 16QAM chain over an SNR grid."""
    if ":" in snrs:
        start, stop, step = (float(v) for v in snrs.split(":"))
        grid = list(np.arange(start, stop + 1e-9, step))
    else:
        grid = [float(v) for v in snrs.split(",")]
    rows = ber_sweep(grid, min_bits=min_bits, seed=seed, max_iters=max_iters)
    os.makedirs(out_dir, exist_ok=True)
    import csv as _csv

    with open(os.path.join(out_dir, "ber.csv"), "w", newline="") as f:
        writer = _csv.writer(f)
        writer.writerow(["snr_db", "bits", "errors", "ber"])
        for r in rows:
            writer.writerow([f"{r['snr_db']:.2f}", r["bits"], r["errors"],
                             f"{r['ber']:.8f}"])
    from . import plots
    plots.save_ber_curve(rows, os.path.join(out_dir, "ber_curve.png"))
    for r in rows:
        click.echo(f"{r['snr_db']:5.1f} dB  ber={r['ber']:.3e}  ({r['bits']} bits)")


if __name__ == "__main__":
    main()
