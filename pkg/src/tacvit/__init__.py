"""Vision-transformer tactile perception with LoRA fine-tuning, a CNN baseline,
a synthetic multi-sensor TacTip-style simulator and a cross-sensor benchmark."""

__version__ = "0.1.0"
