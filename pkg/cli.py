#!/usr/bin/env python3
"""
Command-line entry points: synth, train, erase, eval

    python3 cli.py synth --config synth.json --count 1000 --out data/
    python3 cli.py train --config train.json
    python3 cli.py erase --input photo.jpg --regions boxes.json --weights ckpt.pt --output clean.png
    python3 cli.py eval --pred results/ --gt ground_truth/ [--report-dir report/]
"""
import argparse
import json
import shutil
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np
import torch

import config
from errors import NonFiniteLoss, TextEraseError
from geom import parse_regions
from imagecore import load_image, save_image, save_mask
from metrics import evaluate_pairs, write_report
from net import ModelEraser, load_checkpoint
from rectifiers import EraseOrchestrator
from synthgen import SynthConfig, write_dataset
from trainer import TrainConfig, fit


def _fail(message: str) -> int:
    print(f"❌ {message}", file=sys.stderr)
    return 1


def _output_format(path: Path) -> str:
    return 'jpeg' if path.suffix.lower() in ('.jpg', '.jpeg') else 'png'


def cmd_synth(args) -> int:
    try:
        synth_config = SynthConfig.from_json(args.config)
        if args.seed is not None:
            synth_config.seed = args.seed
        write_dataset(synth_config, args.count, args.out, workers=args.workers)
    except (TextEraseError, OSError, ValueError) as e:
        return _fail(f"Synthesis failed: {e}")
    print(Path(args.out) / 'manifest.json')
    return 0


def cmd_train(args) -> int:
    try:
        train_config = TrainConfig.from_json(args.config)
        if args.seed is not None:
            train_config.seed = args.seed
        if not Path(train_config.manifest).exists():
            return _fail(f"Dataset manifest not found: {train_config.manifest}")
        checkpoint = fit(train_config)
    except NonFiniteLoss as e:
        details = json.dumps(e.diagnostics, sort_keys=True)
        return _fail(f"Training diverged: {details}")
    except (TextEraseError, OSError, ValueError) as e:
        return _fail(f"Training failed: {e}")
    print(f"✅ Final checkpoint: {checkpoint}", file=sys.stderr)
    return 0


def cmd_erase(args) -> int:
    input_path, output_path = Path(args.input), Path(args.output)
    try:
        image = load_image(input_path)
        with open(args.regions, 'r') as f:
            regions = parse_regions(json.load(f))
        model, header, _ = load_checkpoint(args.weights, args.device)
        print(f"🧪 Loaded {args.weights} (epoch {header['epoch']}, "
              f"{header['parameter_count']:,} parameters)", file=sys.stderr)

        eraser = ModelEraser(model, args.device)
        orchestrator = EraseOrchestrator(eraser, args.expand, eraser.input_size, parallel=args.parallel)
        erased, hole = orchestrator.erase_all(image, regions)

        unchanged = np.array_equal(erased.data, image.data)
        if unchanged and input_path.suffix.lower() == output_path.suffix.lower():
            output_path.parent.mkdir(parents=True, exist_ok=True)
            if input_path.resolve() != output_path.resolve():
                shutil.copyfile(input_path, output_path)
        else:
            save_image(erased, output_path, _output_format(output_path))
        if args.mask_out:
            save_mask(hole, args.mask_out)
    except json.JSONDecodeError as e:
        return _fail(f"Regions file is not valid JSON: {e}")
    except (TextEraseError, OSError, ValueError, KeyError, RuntimeError) as e:
        return _fail(f"Erasing failed: {e}")
    print(f"💾 Saved {output_path}", file=sys.stderr)
    return 0


def cmd_eval(args) -> int:
    try:
        report = evaluate_pairs(args.pred, args.gt)
        write_report(report, args.report_dir or args.pred)
    except (TextEraseError, OSError, ValueError) as e:
        return _fail(f"Evaluation failed: {e}")
    summary = report.summary()
    print(f"📊 {summary['count']} images: PSNR {summary['psnr']:.2f} dB, "
          f"SSIM {summary['ssim']:.4f}, MSE {summary['mse']:.6f}", file=sys.stderr)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description='Stroke-based scene text eraser')
    sub = parser.add_subparsers(dest='command', required=True)

    synth = sub.add_parser('synth', help='Generate a synthetic training set')
    synth.add_argument('--config', required=True, help='SynthConfig JSON file')
    synth.add_argument('--count', type=int, required=True, help='Number of samples')
    synth.add_argument('--out', required=True, help='Output directory')
    synth.add_argument('--seed', type=int, default=None, help='Override the config seed')
    synth.add_argument('--workers', type=int, default=0, help='Worker processes (0 = in-process)')
    synth.set_defaults(func=cmd_synth)

    train = sub.add_parser('train', help='Train the network')
    train.add_argument('--config', required=True, help='TrainConfig JSON file')
    train.add_argument('--seed', type=int, default=None, help='Override the config seed')
    train.set_defaults(func=cmd_train)

    erase = sub.add_parser('erase', help='Erase text regions from an image')
    erase.add_argument('--input', required=True, help='Input PNG/JPEG image')
    erase.add_argument('--regions', required=True, help='Regions JSON file')
    erase.add_argument('--weights', required=True, help='Checkpoint file')
    erase.add_argument('--output', required=True, help='Output image path')
    erase.add_argument('--mask-out', default=None, help='Optional full-size stroke mask PNG')
    erase.add_argument('--expand', type=float, default=config.EXPAND_FACTOR,
                       help='Region expansion factor (fraction of the short side)')
    erase.add_argument('--parallel', action='store_true', help='Process disjoint regions in parallel')
    erase.add_argument('--device', default=config.DEVICE, help='torch device')
    erase.set_defaults(func=cmd_erase)

    evaluate = sub.add_parser('eval', help='Score erased images against ground truth')
    evaluate.add_argument('--pred', required=True, help='Directory of erased images')
    evaluate.add_argument('--gt', required=True, help='Directory of ground-truth images')
    evaluate.add_argument('--report-dir', default=None,
                          help='Write report.json/.csv/.pdf here (default: the --pred directory)')
    evaluate.set_defaults(func=cmd_eval)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    torch.use_deterministic_algorithms(True, warn_only=True)
    return args.func(args)


if __name__ == '__main__':
    sys.exit(main())
