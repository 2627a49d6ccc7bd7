"""
Image quality metrics (MSE, PSNR, SSIM) and evaluation reports
"""
import csv
import io
import json
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
import torch
from reportlab.lib import colors
from reportlab.lib.pagesizes import letter
from reportlab.lib.styles import ParagraphStyle, getSampleStyleSheet
from reportlab.lib.units import inch
from reportlab.platypus import Paragraph, SimpleDocTemplate, Spacer, Table, TableStyle
from skimage.metrics import structural_similarity

import config
from errors import ImageIoError, ImageTooSmall, ShapeMismatch, UnmatchedFiles
from imagecore import ImageBuffer, list_images, load_image

# ITU-R BT.601 luma weights
LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])


def _check_pair(a: ImageBuffer, b: ImageBuffer):
    if a.size != b.size:
        raise ShapeMismatch(f"Cannot compare {a.size} with {b.size}")


def mse(a: ImageBuffer, b: ImageBuffer) -> float:
    _check_pair(a, b)
    diff = a.data.astype(np.float64) - b.data.astype(np.float64)
    return float(np.mean(diff * diff))


def psnr(a: ImageBuffer, b: ImageBuffer, peak: float = 1.0,
         cap: Optional[float] = config.PSNR_CAP_DB) -> float:
    """10·log10(peak² / MSE); identical images give +inf, or `cap` when set"""
    error = mse(a, b)
    value = math.inf if error == 0 else 10.0 * math.log10(peak * peak / error)
    return min(value, cap) if cap is not None else value


def psnr_tensor(a: torch.Tensor, b: torch.Tensor, cap: float = config.PSNR_CAP_DB) -> torch.Tensor:
    """Per-sample capped PSNR for N×C×H×W batches in [0,1]"""
    error = ((a.double() - b.double()) ** 2).flatten(1).mean(dim=1)
    value = 10.0 * torch.log10(1.0 / error.clamp(min=1e-300))
    return value.clamp(max=cap)


def luma(img: ImageBuffer) -> np.ndarray:
    return img.data.astype(np.float64) @ LUMA_WEIGHTS


def ssim(a: ImageBuffer, b: ImageBuffer, window: int = 11, k1: float = 0.01,
         k2: float = 0.03, sigma: float = 1.5) -> float:
    """
    Mean SSIM on BT.601 luma with a Gaussian window (σ = sigma), population
    statistics, data range 1, averaged over windows fully inside the image.
    """
    _check_pair(a, b)
    if min(a.size) < window:
        raise ImageTooSmall(f"SSIM needs at least {window}×{window} pixels, got {a.size}")
    return float(structural_similarity(
        luma(a), luma(b), win_size=window, data_range=1.0, gaussian_weights=True,
        sigma=sigma, use_sample_covariance=False, K1=k1, K2=k2,
    ))


# ==================== Reports ====================

@dataclass
class EvalReport:
    per_image: List[Dict] = field(default_factory=list)

    @property
    def count(self) -> int:
        return len(self.per_image)

    def mean(self, key: str) -> float:
        return float(np.mean([row[key] for row in self.per_image])) if self.per_image else float('nan')

    def summary(self) -> Dict:
        return {
            'count': self.count,
            'psnr': self.mean('psnr'),
            'ssim': self.mean('ssim'),
            'mse': self.mean('mse'),
        }

    def to_dict(self) -> Dict:
        return {'summary': self.summary(), 'per_image': self.per_image}


def evaluate_pairs(pred_dir, gt_dir, window: int = 11) -> EvalReport:
    """Score every prediction against the ground truth with the same file name"""
    preds = {p.name: p for p in list_images(pred_dir)}
    gts = {p.name: p for p in list_images(gt_dir)}
    if set(preds) != set(gts):
        missing = sorted(set(gts) - set(preds))
        extra = sorted(set(preds) - set(gts))
        raise UnmatchedFiles(f"Unmatched files - missing predictions: {missing}, no ground truth: {extra}")

    report = EvalReport()
    for name in sorted(gts):
        pred, gt = load_image(preds[name]), load_image(gts[name])
        report.per_image.append({
            'name': name,
            'psnr': psnr(pred, gt),
            'ssim': ssim(pred, gt, window),
            'mse': mse(pred, gt),
        })
    print(f"✅ Evaluated {report.count} image pairs", file=sys.stderr)
    return report


def generate_report_pdf(report: EvalReport, title: str = 'Text Erasing Evaluation') -> io.BytesIO:
    """PDF with the mean scores and a per-image table"""
    buffer = io.BytesIO()
    doc = SimpleDocTemplate(buffer, pagesize=letter)
    elements = []
    styles = getSampleStyleSheet()

    title_style = ParagraphStyle(
        'ReportTitle',
        parent=styles['Heading1'],
        fontSize=20,
        textColor=colors.HexColor('#1a5490'),
        spaceAfter=30
    )
    elements.append(Paragraph(title, title_style))
    summary = report.summary()
    elements.append(Paragraph(
        f"<b>{summary['count']} images - PSNR {summary['psnr']:.2f} dB, "
        f"SSIM {summary['ssim']:.4f}, MSE {summary['mse']:.6f}</b>",
        styles['Heading2']
    ))
    elements.append(Spacer(1, 0.2 * inch))

    data = [['Image', 'PSNR (dB)', 'SSIM', 'MSE']]
    for row in report.per_image:
        data.append([row['name'], f"{row['psnr']:.2f}", f"{row['ssim']:.4f}", f"{row['mse']:.6f}"])
    table = Table(data, colWidths=[3 * inch, 1.2 * inch, 1.2 * inch, 1.2 * inch])
    table.setStyle(TableStyle([
        ('BACKGROUND', (0, 0), (-1, 0), colors.HexColor('#f0f0f0')),
        ('TEXTCOLOR', (0, 0), (-1, -1), colors.black),
        ('ALIGN', (1, 0), (-1, -1), 'RIGHT'),
        ('FONTNAME', (0, 0), (-1, 0), 'Helvetica-Bold'),
        ('FONTSIZE', (0, 0), (-1, -1), 10),
        ('BOTTOMPADDING', (0, 0), (-1, -1), 6),
        ('GRID', (0, 0), (-1, -1), 1, colors.grey)
    ]))
    elements.append(table)

    doc.build(elements)
    buffer.seek(0)
    return buffer


def write_report(report: EvalReport, out_dir) -> Dict[str, Path]:
    """Write report.json, report.csv and report.pdf; returns their paths"""
    out_dir = Path(out_dir)
    paths = {'json': out_dir / 'report.json', 'csv': out_dir / 'report.csv', 'pdf': out_dir / 'report.pdf'}
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        with open(paths['json'], 'w') as f:
            json.dump(report.to_dict(), f, indent=2)
        with open(paths['csv'], 'w', newline='') as f:
            writer = csv.DictWriter(f, fieldnames=['name', 'psnr', 'ssim', 'mse'])
            writer.writeheader()
            writer.writerows(report.per_image)
        paths['pdf'].write_bytes(generate_report_pdf(report).getvalue())
    except OSError as e:
        raise ImageIoError(f"Failed to write report to {out_dir}: {e}") from e
    print(f"💾 Report written to {out_dir}", file=sys.stderr)
    return paths
