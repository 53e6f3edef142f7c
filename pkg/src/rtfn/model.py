"""TFN, LSTMaN and their concatenation, the classifier head and the decoder."""
from __future__ import annotations

import dataclasses
import json
import struct
from dataclasses import dataclass

import numpy as np

from rtfn.attention import Lstman, SelfAttention
from rtfn.layers import Conv1dBlock, Dense, Dropout, LeakyReLU, Module, MultiHeadConv
from rtfn.tensor import DimensionError, concat, concat_backward, make_rng, reduce_mean, reduce_mean_backward


@dataclass
class RtfnConfig:
    num_classes: int = 2
    input_channels: int = 1
    series_length: int = 64
    lstman_depth: int = 2
    hidden: int = 128
    channels: int = 128
    branch_channels: int = 32
    branch_kernels: tuple = (5, 8, 11, 17)
    stem_kernel: int = 11
    dropout: float = 0.5
    alpha: float = 0.1
    bn_decay: float = 0.9
    bn_eps: float = 1e-5
    decoder_widths: tuple = (256, 256, 512)
    seed: int = 0

    def __post_init__(self):
        self.branch_kernels = tuple(int(k) for k in self.branch_kernels)
        self.decoder_widths = tuple(int(w) for w in self.decoder_widths)
        self.validate()

    def validate(self):
        for name in ("num_classes", "input_channels", "series_length", "hidden", "channels", "branch_channels", "stem_kernel"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.lstman_depth not in (1, 2, 3):
            raise ValueError(f"lstman_depth must be 1, 2 or 3, got {self.lstman_depth}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")

    @property
    def tfn_width(self):
        return self.branch_channels * len(self.branch_kernels)

    @property
    def feature_width(self):
        return self.tfn_width + self.hidden

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["branch_kernels"] = list(self.branch_kernels)
        d["decoder_widths"] = list(self.decoder_widths)
        return d


class TfnNetwork(Module):
    """Two stem blocks, multi-head conv, self-attention over time, multi-head conv, plus a kernel-1 shortcut."""

    def __init__(self, cfg: RtfnConfig, rng):
        super().__init__()
        kw = dict(alpha=cfg.alpha, bn_decay=cfg.bn_decay, bn_eps=cfg.bn_eps)
        ch, width = cfg.channels, cfg.tfn_width
        self.stem0 = self.add_child("stem0", Conv1dBlock(cfg.input_channels, ch, cfg.stem_kernel, rng, **kw))
        self.stem1 = self.add_child("stem1", Conv1dBlock(ch, ch, cfg.stem_kernel, rng, **kw))
        self.mh1 = self.add_child("mh1", MultiHeadConv(ch, rng, cfg.branch_channels, cfg.branch_kernels, **kw))
        self.sa = self.add_child("sa", SelfAttention(width, rng))
        self.mh2 = self.add_child("mh2", MultiHeadConv(width, rng, cfg.branch_channels, cfg.branch_kernels, **kw))
        self.shortcut = self.add_child("shortcut", Conv1dBlock(ch, width, 1, rng, **kw))

    def sequence(self, x_cl):
        """Per-step features [N, L, width] from channels-last input [N, L, C_in]."""
        s = self.stem1(self.stem0(x_cl))
        return self.mh2(self.sa(self.mh1(s))) + self.shortcut(s)

    def forward_cl(self, x_cl):
        out = self.sequence(x_cl)
        self._shape = out.shape
        return reduce_mean(out, axis=1)

    def backward_cl(self, g):
        dout = reduce_mean_backward(g, self._shape, axis=1)
        ds = self.mh1.backward(self.sa.backward(self.mh2.backward(dout))) + self.shortcut.backward(dout)
        return self.stem0.backward(self.stem1.backward(ds))

    def forward(self, x):
        """Pooled features [N, width] for input [N, C_in, L]."""
        return self.forward_cl(np.ascontiguousarray(np.transpose(x, (0, 2, 1))))

    def backward(self, g):
        return self.backward_cl(g).transpose(0, 2, 1)


class RtfnModel(Module):
    """Dual-branch encoder with a dropout + dense classification head."""

    def __init__(self, cfg: RtfnConfig, rng=None):
        super().__init__()
        self.cfg = cfg
        rng = make_rng(cfg.seed) if rng is None else rng
        self.tfn = self.add_child("tfn", TfnNetwork(cfg, rng))
        self.lstman = self.add_child("lstman", Lstman(cfg.input_channels, cfg.hidden, cfg.lstman_depth, rng))
        self.head_dropout = self.add_child("head_dropout", Dropout(cfg.dropout, rng))
        self.head = self.add_child("head", Dense(cfg.feature_width, cfg.num_classes, rng))
        self.assign_names()

    def features(self, x):
        """Concatenated pooled TFN and LSTMaN features, [N, tfn_width + hidden]."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 3 or x.shape[1] != self.cfg.input_channels:
            raise DimensionError(f"expected input [N, {self.cfg.input_channels}, L], got {x.shape}")
        # both branches read the series as [N, L, C]: channels for TFN, per-step features for LSTMaN
        x_cl = np.ascontiguousarray(x.transpose(0, 2, 1))
        f_tfn = self.tfn.forward_cl(x_cl)
        seq = self.lstman(x_cl)
        self._seq_shape = seq.shape
        return concat([f_tfn, reduce_mean(seq, axis=1)], axis=1)

    def features_backward(self, g):
        g_tfn, g_rel = concat_backward(g, [self.cfg.tfn_width, self.cfg.hidden], axis=1)
        dx = self.tfn.backward_cl(np.ascontiguousarray(g_tfn))
        dx += self.lstman.backward(reduce_mean_backward(g_rel, self._seq_shape, axis=1))
        return dx.transpose(0, 2, 1)

    def forward(self, x):
        """Class logits [N, num_classes]."""
        return self.head(self.head_dropout(self.features(x)))

    def backward(self, g):
        return self.features_backward(self.head_dropout.backward(self.head.backward(g)))

    def predict(self, x):
        # argmax returns the lowest index among ties
        return np.argmax(self.forward(x), axis=1)


class Decoder(Module):
    """Four dense layers mapping encoder features back to the input shape."""

    def __init__(self, cfg: RtfnConfig, rng=None):
        super().__init__()
        rng = make_rng(cfg.seed + 1) if rng is None else rng
        self.out_shape = (cfg.input_channels, cfg.series_length)
        widths = [cfg.feature_width, *cfg.decoder_widths, cfg.input_channels * cfg.series_length]
        self.layers = []
        for i in range(len(widths) - 1):
            self.layers.append(self.add_child(f"fc{i}", Dense(widths[i], widths[i + 1], rng)))
            if i < len(widths) - 2:
                self.layers.append(self.add_child(f"act{i}", LeakyReLU(cfg.alpha)))
        self.assign_names("decoder.")

    def forward(self, f):
        for layer in self.layers:
            f = layer(f)
        return f.reshape(f.shape[0], *self.out_shape)

    def backward(self, g):
        g = g.reshape(g.shape[0], -1)
        for layer in reversed(self.layers):
            g = layer.backward(g)
        return g


def tfn_forward(x, net: TfnNetwork):
    return net(x)


def rtfn_forward(x, model: RtfnModel):
    return model.features(x)


def classify(x, model: RtfnModel):
    return model(x)


def autoencode(x, model: RtfnModel, decoder: Decoder):
    return decoder(model.features(x))


# Checkpoint layout (all integers little-endian):
#   b"RTFNCKPT", u32 version, u64 len + UTF-8 JSON config,
#   u64 entry count, then per entry: u32 len + UTF-8 name, u32 ndim,
#   ndim * u64 dims, raw '<f8' data.
_MAGIC = b"RTFNCKPT"
_VERSION = 1


def _buffer_prefix(m: Module):
    return "decoder." if isinstance(m, Decoder) else ""


def state_dict(*modules: Module) -> dict[str, np.ndarray]:
    """Parameters (by their stamped names) and buffers of the given modules."""
    state = {}
    for m in modules:
        for p in m.parameters():
            state[p.name] = p.value
        for name, b in m.named_buffers(_buffer_prefix(m)):
            state[name] = b
    return state


def load_state(state: dict[str, np.ndarray], *modules: Module):
    """Copy arrays into matching parameters and buffers; every entry must be consumed."""
    remaining = dict(state)
    for m in modules:
        for p in m.parameters():
            arr = remaining.pop(p.name)
            if arr.shape != p.value.shape:
                raise DimensionError(f"{p.name}: checkpoint shape {arr.shape} != model shape {p.value.shape}")
            p.value[...] = arr
        for name, b in m.named_buffers(_buffer_prefix(m)):
            b[...] = remaining.pop(name)
    if remaining:
        raise KeyError(f"unused checkpoint entries: {sorted(remaining)[:5]}")


def save_checkpoint(path, config: dict, state: dict[str, np.ndarray]):
    cfg = json.dumps(config, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<IQ", _VERSION, len(cfg)))
        fh.write(cfg)
        fh.write(struct.pack("<Q", len(state)))
        for name in sorted(state):
            arr = np.ascontiguousarray(state[name], dtype="<f8")
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            fh.write(arr.tobytes())


def load_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:8] != _MAGIC:
        raise ValueError(f"{path}: not an RTFN checkpoint")
    version, n = struct.unpack_from("<IQ", buf, 8)
    if version != _VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    pos = 20
    config = json.loads(buf[pos : pos + n].decode("utf-8"))
    pos += n
    (count,) = struct.unpack_from("<Q", buf, pos)
    pos += 8
    state = {}
    for _ in range(count):
        (ln,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        name = buf[pos : pos + ln].decode("utf-8")
        pos += ln
        (ndim,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        shape = struct.unpack_from(f"<{ndim}Q", buf, pos)
        pos += 8 * ndim
        nbytes = 8 * int(np.prod(shape, dtype=np.int64))
        state[name] = np.frombuffer(buf, dtype="<f8", count=nbytes // 8, offset=pos).reshape(shape).astype(np.float64)
        pos += nbytes
    return config, state
