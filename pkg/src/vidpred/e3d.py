"""Eidetic 3D LSTM cell with an attention-based recall over past cell states,
plus a plain convolutional LSTM cell used as the ablation baseline.

All maps are channels-first: ``[B, K, H, W]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import torch
from torch import nn

from .errors import ConfigurationError

NORM_EPS = 1e-5


@dataclass
class RecallState:
    hidden: torch.Tensor
    cell: torch.Tensor
    bank: tuple = ()
    inputs: tuple = ()  # previous inputs feeding the temporal convolution window
    capacity: int = 5

    def detach(self):
        return replace(
            self,
            hidden=self.hidden.detach(),
            cell=self.cell.detach(),
            bank=tuple(b.detach() for b in self.bank),
            inputs=tuple(x.detach() for x in self.inputs),
        )


def recall_attend(query, bank, keys=None, return_weights=False):
    """Attention read over stored cell maps.

    Weights are a softmax over bank entries of ``<query, key> / sqrt(d)`` with
    ``d`` the flattened map size; the result is the weighted sum of the bank
    entries. An empty bank reads as a zero map.
    """
    if len(bank) == 0:
        out = torch.zeros_like(query)
        if return_weights:
            return out, query.new_zeros(query.shape[0], 0)
        return out
    keys = bank if keys is None else keys
    b = query.shape[0]
    q = query.reshape(b, 1, -1)
    k = torch.stack([kk.reshape(b, -1) for kk in keys], dim=1)
    v = torch.stack(list(bank), dim=1)
    logits = (q * k).sum(-1) / math.sqrt(q.shape[-1])
    weights = torch.softmax(logits, dim=1)
    out = (weights.reshape(b, -1, 1, 1, 1) * v).sum(1)
    if return_weights:
        return out, weights
    return out


def channel_standardize(x, gain, offset, eps=NORM_EPS):
    """Per-sample, per-channel standardization over the spatial dims."""
    mean = x.mean(dim=(2, 3), keepdim=True)
    var = x.var(dim=(2, 3), keepdim=True, unbiased=False)
    xhat = (x - mean) / torch.sqrt(var + eps)
    return xhat * gain.view(1, -1, 1, 1) + offset.view(1, -1, 1, 1)


class E3DCell(nn.Module):
    """E3D-LSTM cell.

    Update rule::

        i, f, o, g, r = gates(conv3d(input stack) + conv2d(hidden))
        recall        = recall_attend(sigmoid(r), key_proj(bank), bank)
        cell'         = i * g + standardize(f * cell + recall)
        hidden'       = o * tanh(cell')

    The bank keeps the last ``capacity`` cell states (FIFO).
    """

    def __init__(self, in_channels, hidden_channels, capacity=5, window=2, kernel_size=3):
        super().__init__()
        if capacity < 1 or window < 1:
            raise ConfigurationError("capacity and window must be >= 1")
        self.in_channels = in_channels
        self.hidden_channels = hidden_channels
        self.capacity = capacity
        self.window = window
        pad = kernel_size // 2
        k = hidden_channels
        self.x_conv = nn.Conv3d(in_channels, 5 * k, (window, kernel_size, kernel_size),
                                padding=(0, pad, pad))
        self.h_conv = nn.Conv2d(k, 5 * k, kernel_size, padding=pad, bias=False)
        self.key_proj = nn.Conv2d(k, k, 1, bias=False)  # a key bias shifts all logits equally
        self.norm_gain = nn.Parameter(torch.ones(k))
        self.norm_offset = nn.Parameter(torch.zeros(k))

    def init_state(self, batch, height, width, dtype=None, device=None):
        dtype = dtype or self.h_conv.weight.dtype
        z = torch.zeros(batch, self.hidden_channels, height, width, dtype=dtype, device=device)
        return RecallState(z, z.clone(), (), (), self.capacity)

    def _check(self, x, state):
        if x.dim() != 4 or x.shape[1] != self.in_channels:
            raise ConfigurationError(
                f"cell expects [B, {self.in_channels}, H, W] input, got {tuple(x.shape)}")
        if state.hidden.shape[0] != x.shape[0] or state.hidden.shape[2:] != x.shape[2:]:
            raise ConfigurationError(
                f"state {tuple(state.hidden.shape)} does not match input {tuple(x.shape)}")

    def gates(self, x, state):
        history = list(state.inputs)[-(self.window - 1):] if self.window > 1 else []
        pad = [torch.zeros_like(x)] * (self.window - 1 - len(history))
        stack = torch.stack(pad + history + [x], dim=2)
        z = self.x_conv(stack).squeeze(2) + self.h_conv(state.hidden)
        i, f, o, g, r = z.chunk(5, dim=1)
        return torch.sigmoid(i), torch.sigmoid(f), torch.sigmoid(o), torch.tanh(g), torch.sigmoid(r)

    def forward(self, x, state: RecallState, use_bank=True):
        self._check(x, state)
        i, f, o, g, query = self.gates(x, state)
        memory = f * state.cell
        if use_bank and len(state.bank):
            keys = [self.key_proj(b) for b in state.bank]
            memory = memory + recall_attend(query, state.bank, keys)
        cell = i * g + channel_standardize(memory, self.norm_gain, self.norm_offset)
        hidden = o * torch.tanh(cell)
        bank = (state.bank + (cell,))[-state.capacity:]
        inputs = (state.inputs + (x,))[-(self.window - 1):] if self.window > 1 else ()
        return hidden, RecallState(hidden, cell, bank, inputs, state.capacity)


class ConvLSTMCell(nn.Module):
    """Standard convolutional LSTM: ``c' = f*c + i*g``, ``h' = o*tanh(c')``."""

    def __init__(self, in_channels, hidden_channels, kernel_size=3):
        super().__init__()
        self.in_channels = in_channels
        self.hidden_channels = hidden_channels
        self.conv = nn.Conv2d(in_channels + hidden_channels, 4 * hidden_channels, kernel_size,
                              padding=kernel_size // 2)

    def init_state(self, batch, height, width, dtype=None, device=None):
        dtype = dtype or self.conv.weight.dtype
        z = torch.zeros(batch, self.hidden_channels, height, width, dtype=dtype, device=device)
        return RecallState(z, z.clone(), (), (), 1)

    def forward(self, x, state: RecallState):
        if x.dim() != 4 or x.shape[1] != self.in_channels:
            raise ConfigurationError(
                f"cell expects [B, {self.in_channels}, H, W] input, got {tuple(x.shape)}")
        if state.hidden.shape[0] != x.shape[0] or state.hidden.shape[2:] != x.shape[2:]:
            raise ConfigurationError("state does not match input")
        z = self.conv(torch.cat([x, state.hidden], dim=1))
        i, f, o, g = z.chunk(4, dim=1)
        cell = torch.sigmoid(f) * state.cell + torch.sigmoid(i) * torch.tanh(g)
        hidden = torch.sigmoid(o) * torch.tanh(cell)
        return hidden, RecallState(hidden, cell, (), (), state.capacity)


def cell_step(cell: E3DCell, x, state):
    return cell(x, state)


def conv_lstm_step(cell: ConvLSTMCell, x, state):
    return cell(x, state)


def gate_slice(gate, hidden_channels):
    """Channel slice of the stacked gate outputs for ``gate`` in
    ``'i', 'f', 'o', 'g'`` (and ``'r'`` for the E3D cell)."""
    idx = "ifogr".index(gate)
    return slice(idx * hidden_channels, (idx + 1) * hidden_channels)
