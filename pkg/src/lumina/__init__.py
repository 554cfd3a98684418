"""lumina: closed-loop quality assessment and optimization for
low-light image enhancement.

Subpackage map: ``imaging`` (pixel primitives and raster I/O),
``nnet`` (layer engine, Adam, weights files, gradient checking),
``metrics`` (full-reference quality metrics), ``fusion`` (pseudo-MOS
mapping and correlation statistics), ``losses`` (differentiable
fidelity/quality/joint losses), ``quality`` (no-reference scoring
model), ``enhance`` (residual enhancement network), ``loop`` (the
alternating training orchestrator), ``synth`` (seeded dataset
generation), ``bench`` (correlation benchmark), ``cli`` (command-line
entry point).
"""

__version__ = "0.1.0"
