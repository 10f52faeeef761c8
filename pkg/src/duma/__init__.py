"""Dual multi-head co-attention for multi-choice reading comprehension.

Everything runs on a small float64 autograd engine (`duma.tensor`); the
model, data pipeline, and training harness live in their own modules and
are re-exported lazily here so that `import duma` stays cheap.
"""

__version__ = "0.1.0"

_SUBMODULES = {
    "tensor", "attention", "coattn", "model", "data",
    "checkpoint", "train", "ablation", "cli",
}


def __getattr__(name):
    if name in _SUBMODULES:
        import importlib

        return importlib.import_module(f"duma.{name}")
    raise AttributeError(f"module 'duma' has no attribute {name!r}")
