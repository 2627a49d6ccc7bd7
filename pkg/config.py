"""
Configuration module for the stroke-based text eraser
"""
import os
from dotenv import load_dotenv

load_dotenv()

# Runtime
DEVICE = os.getenv('DEVICE', 'cpu')
NUM_WORKERS = int(os.getenv('NUM_WORKERS', 0))

# Masks
MASK_THRESHOLD = float(os.getenv('MASK_THRESHOLD', 0.5))

# Inference pipeline
EXPAND_FACTOR = float(os.getenv('EXPAND_FACTOR', 0.15))
NETWORK_HEIGHT = int(os.getenv('NETWORK_HEIGHT', 128))
NETWORK_WIDTH = int(os.getenv('NETWORK_WIDTH', 640))

# Image codec
JPEG_SAVE_QUALITY = int(os.getenv('JPEG_SAVE_QUALITY', 95))

# VGG feature extractor for perceptual / style losses
VGG_WEIGHTS_PATH = os.getenv('VGG_WEIGHTS_PATH')
VGG_WEIGHTS_URL = os.getenv('VGG_WEIGHTS_URL', 'https://download.pytorch.org/models/vgg19-dcbb9e9d.pth')

# Training
CHECKPOINT_DIR = os.getenv('CHECKPOINT_DIR', 'checkpoints')
TRAIN_LOG_NAME = os.getenv('TRAIN_LOG_NAME', 'train_log.jsonl')

# Evaluation
PSNR_CAP_DB = float(os.getenv('PSNR_CAP_DB', 99.0))
