"""A miniature latent-diffusion U-Net with the production block layout:
self-attention at the latent resolution and the three halvings below it,
with a 5/5/5/1 layer census. Weights are random; only the structure and
the attention algebra matter to these tests.
"""

import math

import pytest
import torch
from torch import nn


class ToySelfAttention(nn.Module):
    def __init__(self, dim: int, heads: int = 2):
        super().__init__()
        self.heads = heads
        self.to_q = nn.Linear(dim, dim, bias=False)
        self.to_k = nn.Linear(dim, dim, bias=False)
        self.to_v = nn.Linear(dim, dim, bias=False)
        self.to_out = nn.Linear(dim, dim)

    def forward(self, hidden_states: torch.Tensor) -> torch.Tensor:
        b, seq, dim = hidden_states.shape
        h = self.heads
        dh = dim // h
        q = self.to_q(hidden_states).view(b, seq, h, dh).transpose(1, 2)
        k = self.to_k(hidden_states).view(b, seq, h, dh).transpose(1, 2)
        v = self.to_v(hidden_states).view(b, seq, h, dh).transpose(1, 2)
        probs = torch.softmax(q @ k.transpose(-1, -2) / math.sqrt(dh), dim=-1)
        out = (probs @ v).transpose(1, 2).reshape(b, seq, dim)
        return self.to_out(out)


class ToyTransformerBlock(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.norm1 = nn.LayerNorm(channels)
        self.attn1 = ToySelfAttention(channels)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, c, h, w = x.shape
        seq = x.permute(0, 2, 3, 1).reshape(b, h * w, c)
        seq = seq + self.attn1(self.norm1(seq))
        return seq.reshape(b, h, w, c).permute(0, 3, 1, 2)


class ToyUNet(nn.Module):
    """Down 2+2+2 attention blocks, mid 1, up 3+3+3: census 5/5/5/1."""

    def __init__(self, latent_channels: int = 4):
        super().__init__()
        chans = [16, 24, 32]
        self.conv_in = nn.Conv2d(latent_channels, chans[0], 3, padding=1)
        self.down_blocks = nn.ModuleList(
            nn.ModuleList(ToyTransformerBlock(c) for _ in range(2)) for c in chans
        )
        self.downsamplers = nn.ModuleList(
            nn.Conv2d(a, b, 3, stride=2, padding=1)
            for a, b in zip(chans, chans[1:] + [chans[-1]])
        )
        self.mid_block = ToyTransformerBlock(chans[-1])
        up_chans = chans[::-1]
        self.upsamplers = nn.ModuleList(
            nn.Conv2d(a, b, 3, padding=1)
            for a, b in zip([chans[-1]] + up_chans[:-1], up_chans)
        )
        self.up_blocks = nn.ModuleList(
            nn.ModuleList(ToyTransformerBlock(c) for _ in range(3)) for c in up_chans
        )
        self.conv_out = nn.Conv2d(chans[0], latent_channels, 3, padding=1)

    def forward(self, latent, timestep=None, encoder_hidden_states=None):
        x = self.conv_in(latent)
        for blocks, down in zip(self.down_blocks, self.downsamplers):
            for block in blocks:
                x = block(x)
            x = down(x)
        x = self.mid_block(x)
        for up, blocks in zip(self.upsamplers, self.up_blocks):
            x = nn.functional.interpolate(x, scale_factor=2, mode="nearest")
            x = up(x)
            for block in blocks:
                x = block(x)
        return self.conv_out(x)


class ToyHost:
    model_id = "toy-unet"
    image_size = 512
    latent_resolution = 64
    max_timestep = 999

    def __init__(self, seed: int = 0):
        torch.manual_seed(seed)
        self.encoder = nn.Conv2d(3, 4, 1)
        self.unet = ToyUNet()
        self.encoder.eval()
        self.unet.eval()

    def encode_image(self, image: torch.Tensor) -> torch.Tensor:
        with torch.no_grad():
            pooled = nn.functional.avg_pool2d(image, kernel_size=8)
            return self.encoder(pooled)

    def unconditional_embedding(self) -> torch.Tensor:
        return torch.zeros(1, 77, 16)

    def add_noise(self, latent, timestep, generator):
        keep = 1.0 - timestep / (self.max_timestep + 1)
        noise = torch.randn(latent.shape, generator=generator)
        return math.sqrt(keep) * latent + math.sqrt(1.0 - keep) * noise

    def denoise_step(self, noisy_latent, timestep, embedding) -> None:
        with torch.no_grad():
            self.unet(noisy_latent, timestep, encoder_hidden_states=embedding)

    def self_attention_modules(self):
        return [
            (name, module)
            for name, module in self.unet.named_modules()
            if name.endswith("attn1")
        ]


@pytest.fixture(scope="session")
def toy_host():
    return ToyHost(seed=0)


@pytest.fixture(scope="session")
def sample_image(tmp_path_factory):
    from PIL import Image
    import numpy as np

    rng = np.random.default_rng(3)
    array = rng.integers(0, 256, size=(512, 512, 3), dtype=np.uint8)
    path = tmp_path_factory.mktemp("img") / "sample.png"
    Image.fromarray(array).save(path)
    return str(path)


@pytest.fixture(scope="session")
def extraction(toy_host, sample_image, tmp_path_factory):
    from attnseg_extractor import ExtractionJob, run_extraction

    out = tmp_path_factory.mktemp("tensors")
    job = ExtractionJob(
        image_path=sample_image, output_dir=str(out), timestep=300, seed=11
    )
    return run_extraction(toy_host, job), out
