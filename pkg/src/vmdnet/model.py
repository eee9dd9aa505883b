"""The VMDNet forecaster.

Each mode ``k`` of a window is embedded as::

    E_k[t] = token_k(u_k)[t] + time(t) + pos(t) + freq_k(omega_k)

where ``token_k`` is a causal width-3 convolution, ``freq_k`` a linear map of
the mode's center frequency, and ``time``/``pos`` are shared by all modes.
Every mode then goes through its own TCN branch (residual blocks of dilated
causal convolutions), each branch emits ``F`` values, and a two-layer MLP
fuses the ``K x F`` branch forecasts into the final ``F`` values.

Variant switches reproduce the ablations:

``use_vmd=False``
    the raw window (sum of modes) is embedded once and decoded by one TCN.
``parallel_decoding=False``
    mode embeddings are averaged over ``k`` and decoded by one shared TCN.
``use_freq_embed=False``
    the frequency term is dropped.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError, ShapeMismatch
from .nn import engine as ops
from .nn.engine import Tensor
from .nn.optim import ParamStore
from .seeding import substream

N_TIME_FEATURES = 4


def required_depth(P: int, kernel_size: int) -> int:
    """Smallest block count whose receptive field covers ``P`` steps."""
    if kernel_size < 2:
        raise ConfigError("kernel_size must be >= 2 for the receptive field to grow")
    return max(1, math.ceil(math.log2((P - 1) / (2 * (kernel_size - 1)) + 1)))


def receptive_field(num_blocks: int, kernel_size: int) -> int:
    """Two convolutions per block with dilation ``2**l``."""
    return 1 + 2 * (kernel_size - 1) * (2 ** num_blocks - 1)


@dataclass(frozen=True)
class ModelConfig:
    K: int
    P: int
    F: int
    d_model: int = 64
    tcn_channels: tuple = (32, 64, 64)
    kernel_size: int = 3
    dropout: float = 0.1
    use_vmd: bool = True
    use_freq_embed: bool = True
    parallel_decoding: bool = True
    extend_to_receptive_field: bool = True
    fusion_hidden: Optional[int] = None
    n_time_features: int = N_TIME_FEATURES
    rng_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "tcn_channels", tuple(int(c) for c in self.tcn_channels))
        if not self.tcn_channels:
            raise ConfigError("tcn_channels must be non-empty")
        if self.d_model < 8:
            raise ConfigError(f"d_model must be >= 8, got {self.d_model}")
        if self.K < 1 or self.P < 8 or self.F < 1:
            raise ConfigError(f"need K >= 1, P >= 8, F >= 1; got K={self.K}, P={self.P}, F={self.F}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")

    @property
    def channels(self) -> tuple:
        """Per-block widths, padded with the last width up to the required depth."""
        ch = list(self.tcn_channels)
        if self.extend_to_receptive_field:
            need = required_depth(self.P, self.kernel_size)
            ch += [ch[-1]] * max(0, need - len(ch))
        return tuple(ch)

    @property
    def hidden(self) -> int:
        return self.fusion_hidden or 2 * self.F

    @property
    def n_branches(self) -> int:
        return self.K if (self.use_vmd and self.parallel_decoding) else 1

    def to_dict(self) -> dict:
        d = asdict(self)
        d["tcn_channels"] = list(self.tcn_channels)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)

    def variant(self, name: str) -> "ModelConfig":
        """Config for one of ``full``, ``no_vmd``, ``no_freq``, ``no_parallel``."""
        if name in ("full", "fixed_params"):
            return self
        if name == "no_vmd":
            return replace(self, use_vmd=False)
        if name == "no_freq":
            return replace(self, use_freq_embed=False)
        if name == "no_parallel":
            return replace(self, parallel_decoding=False)
        raise ConfigError(f"unknown variant {name!r}")


def sinusoidal_table(length: int, d_model: int) -> np.ndarray:
    pos = np.arange(length)[:, None]
    i = np.arange(0, d_model, 2)[None, :]
    angle = pos / np.power(10000.0, i / d_model)
    table = np.zeros((length, d_model))
    table[:, 0::2] = np.sin(angle)
    table[:, 1::2] = np.cos(angle[:, : d_model // 2])
    return table


class VmdNet:
    """Parameters and forward pass of the forecaster."""

    def __init__(self, config: ModelConfig):
        self.config = config
        self.params = ParamStore()
        self.training = False
        self._rng = substream(config.rng_seed, "model-init")
        self.pos_table = sinusoidal_table(config.P, config.d_model)
        self._build()

    # -- construction -----------------------------------------------------

    def _uniform(self, name, shape, fan_in):
        bound = 1.0 / math.sqrt(fan_in)
        return self.params.add(name, self._rng.uniform(-bound, bound, size=shape))

    def _conv(self, prefix, c_out, c_in, k):
        self._uniform(prefix + ".w", (c_out, c_in, k), c_in * k)
        self._uniform(prefix + ".b", (c_out,), c_in * k)

    def _dense(self, prefix, d_in, d_out):
        self._uniform(prefix + ".w", (d_in, d_out), d_in)
        self._uniform(prefix + ".b", (d_out,), d_in)

    def _decoder(self, prefix):
        cfg = self.config
        c_in = cfg.d_model
        for l, c_out in enumerate(cfg.channels):
            self._conv(f"{prefix}.block{l}.conv1", c_out, c_in, cfg.kernel_size)
            self._conv(f"{prefix}.block{l}.conv2", c_out, c_out, cfg.kernel_size)
            if c_in != c_out:
                self._conv(f"{prefix}.block{l}.down", c_out, c_in, 1)
            c_in = c_out
        self._dense(f"{prefix}.head", c_in, cfg.F)

    def _build(self):
        cfg = self.config
        if cfg.use_vmd:
            for k in range(cfg.K):
                self._conv(f"mode{k}.token", cfg.d_model, 1, 3)
                if cfg.use_freq_embed:
                    self._dense(f"mode{k}.freq", 1, cfg.d_model)
        else:
            self._conv("raw.token", cfg.d_model, 1, 3)
        self._dense("time", cfg.n_time_features, cfg.d_model)
        if cfg.n_branches > 1:
            for k in range(cfg.K):
                self._decoder(f"branch{k}")
        else:
            self._decoder("decoder")
        self._dense("fusion.fc1", cfg.n_branches * cfg.F, cfg.hidden)
        self._dense("fusion.fc2", cfg.hidden, cfg.F)

    # -- helpers ----------------------------------------------------------

    def p(self, name) -> Tensor:
        return self.params[name]

    def num_parameters(self) -> int:
        return self.params.num_values()

    def train_mode(self, flag=True):
        self.training = flag
        return self

    def _check_inputs(self, U, Omega, tf):
        cfg = self.config
        U = np.asarray(U, dtype=np.float64)
        Omega = np.asarray(Omega, dtype=np.float64)
        if U.ndim != 3 or U.shape[1:] != (cfg.K, cfg.P):
            raise ShapeMismatch(f"U must be (batch, {cfg.K}, {cfg.P}), got {U.shape}")
        if Omega.shape != U.shape[:2]:
            raise ShapeMismatch(f"Omega must be (batch, {cfg.K}), got {Omega.shape}")
        if tf is None:
            tf = np.zeros((U.shape[0], cfg.P, cfg.n_time_features))
        tf = np.asarray(tf, dtype=np.float64)
        if tf.shape != (U.shape[0], cfg.P, cfg.n_time_features):
            raise ShapeMismatch(f"time features must be (batch, {cfg.P}, {cfg.n_time_features}), got {tf.shape}")
        return U, Omega, tf

    # -- embedding --------------------------------------------------------

    def _shared(self, tf):
        time = ops.linear(tf, self.p("time.w"), self.p("time.b"))
        return time + self.pos_table, time

    def _token(self, prefix, series):
        return ops.conv1d_causal_nlc(series[:, :, None], self.p(prefix + ".w"),
                                     self.p(prefix + ".b"), dilation=1)

    def _freq(self, k, Omega):
        f = ops.linear(Omega[:, k:k + 1], self.p(f"mode{k}.freq.w"), self.p(f"mode{k}.freq.b"))
        return ops.reshape(f, (Omega.shape[0], 1, self.config.d_model))

    def embed_modes(self, U, Omega, tf):
        """List of K tensors, each (batch, P, d_model)."""
        shared, _ = self._shared(tf)
        out = []
        for k in range(self.config.K):
            e = self._token(f"mode{k}.token", U[:, k, :]) + shared
            if self.config.use_freq_embed:
                e = e + self._freq(k, Omega)
            out.append(e)
        return out

    def embed(self, U, Omega, tf=None, debug=False):
        """Mode embeddings as a (batch, K, P, d_model) array.

        With ``debug=True`` returns a dict of the four addends (``token``,
        ``time``, ``pos``, ``freq``) alongside the total under ``"E"``.
        """
        U, Omega, tf = self._check_inputs(U, Omega, tf)
        if not self.config.use_vmd:
            raise ConfigError("embed() is per-mode; the no_vmd variant has no mode embeddings")
        E = np.stack([e.data for e in self.embed_modes(U, Omega, tf)], axis=1)
        if not debug:
            return E
        _, time = self._shared(tf)
        B, K, P, d = E.shape
        token = np.stack([self._token(f"mode{k}.token", U[:, k, :]).data for k in range(K)], axis=1)
        if self.config.use_freq_embed:
            freq = np.stack([np.broadcast_to(self._freq(k, Omega).data, (B, P, d)) for k in range(K)], axis=1)
        else:
            freq = np.zeros_like(E)
        return {"E": E, "token": token, "time": time.data, "pos": self.pos_table.copy(), "freq": freq}

    # -- decoding ---------------------------------------------------------

    def _dropout(self, x, rng):
        return ops.dropout(x, self.config.dropout, rng=rng, training=self.training)

    def decode(self, prefix, E, rng=None, subgrid=True):
        """TCN over a (batch, P, d_model) embedding, returning (batch, F).

        The head reads only the last timestep, and block ``l`` (dilation
        ``2**l``) then needs its input only at steps ``P-1, P-1-2**l, ...``.
        With ``subgrid=True`` each block runs on that decimated grid, where
        the dilated convolution becomes an undilated one.  The forecast is
        the same as the full-length computation (``subgrid=False``); only
        dropout masks are drawn over fewer positions.
        """
        cfg = self.config
        h = E
        c_in = cfg.d_model
        for l, c_out in enumerate(cfg.channels):
            if subgrid:
                if l > 0:
                    h = h[:, (h.shape[1] - 1) % 2::2, :]
                d = 1
            else:
                d = 2 ** l
            b = f"{prefix}.block{l}"
            a = ops.conv1d_causal_nlc(h, self.p(b + ".conv1.w"), self.p(b + ".conv1.b"), d)
            a = self._dropout(ops.gelu(a), rng)
            a = ops.conv1d_causal_nlc(a, self.p(b + ".conv2.w"), self.p(b + ".conv2.b"), d)
            a = self._dropout(ops.gelu(a), rng)
            if c_in != c_out:
                res = ops.conv1d_causal_nlc(h, self.p(b + ".down.w"), self.p(b + ".down.b"), 1)
            else:
                res = h
            h = a + res
            c_in = c_out
        last = h[:, -1, :]
        return ops.linear(last, self.p(f"{prefix}.head.w"), self.p(f"{prefix}.head.b"))

    def decode_branch(self, E_k, k, rng=None):
        if self.config.n_branches > 1:
            if not 0 <= k < self.config.K:
                raise ShapeMismatch(f"branch index {k} out of range for K={self.config.K}")
            return self.decode(f"branch{k}", E_k, rng)
        return self.decode("decoder", E_k, rng)

    def fuse(self, stacked):
        h = ops.gelu(ops.linear(stacked, self.p("fusion.fc1.w"), self.p("fusion.fc1.b")))
        return ops.linear(h, self.p("fusion.fc2.w"), self.p("fusion.fc2.b"))

    def branch_outputs(self, U, Omega, tf=None, rng=None):
        """Per-branch forecasts before fusion, list of (batch, F) tensors."""
        U, Omega, tf = self._check_inputs(U, Omega, tf)
        cfg = self.config
        if not cfg.use_vmd:
            shared, _ = self._shared(tf)
            E = self._token("raw.token", U.sum(axis=1)) + shared
            return [self.decode("decoder", E, rng)]
        embeds = self.embed_modes(U, Omega, tf)
        if cfg.parallel_decoding:
            return [self.decode_branch(e, k, rng) for k, e in enumerate(embeds)]
        pooled = ops.mean(ops.stack(embeds, axis=1), axis=1)
        return [self.decode("decoder", pooled, rng)]

    def forward(self, U, Omega, tf=None, rng=None) -> Tensor:
        """Forecast of shape (batch, F) as a Tensor on the tape."""
        outs = self.branch_outputs(U, Omega, tf, rng)
        B = outs[0].shape[0]
        stacked = ops.reshape(ops.stack(outs, axis=1), (B, len(outs) * self.config.F))
        return self.fuse(stacked)

    def predict(self, U, Omega, tf=None) -> np.ndarray:
        was = self.training
        self.training = False
        try:
            return self.forward(U, Omega, tf).data
        finally:
            self.training = was
