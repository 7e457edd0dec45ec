"""Sinc filter-bank speaker identification with an additive-margin softmax head.

Everything runs on numpy: tensor kernels (``ndarr``), WAV I/O and a synthetic
speaker corpus (``signal``), the learnable band-pass front end (``sincbank``),
the network (``network``), losses (``loss``), RMSprop (``optim``), and the
training harness (``trainer``).
"""

__version__ = "0.1.0"
