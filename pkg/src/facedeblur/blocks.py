"""Small shared network pieces."""

import torch
import torch.nn as nn


def scaled_init_(conv: nn.Conv2d, scale: float = 0.1):
    """Shrink a conv's init so residual paths start near identity."""
    with torch.no_grad():
        conv.weight.mul_(scale)
        if conv.bias is not None:
            conv.bias.zero_()


class ResidualBlock(nn.Module):
    """conv-SiLU-conv with identity skip, no normalisation."""

    def __init__(self, width: int):
        super().__init__()
        self.conv1 = nn.Conv2d(width, width, 3, padding=1)
        self.conv2 = nn.Conv2d(width, width, 3, padding=1)
        self.act = nn.SiLU()
        scaled_init_(self.conv1)
        scaled_init_(self.conv2)

    def forward(self, x):
        return x + self.conv2(self.act(self.conv1(x)))
