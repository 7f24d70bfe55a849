"""Host-model adapters.

The extractor core only needs a small surface: encode an image to the
latent space, produce the unconditional text embedding, noise the latent
to a timestep, run the U-Net, and enumerate its self-attention modules.
``StableDiffusionHost`` provides that surface for Stable-Diffusion-class
checkpoints through diffusers (an optional dependency); tests drive the
same surface with a miniature U-Net.
"""

from __future__ import annotations

from typing import Protocol

import torch


class HostModel(Protocol):
    model_id: str
    image_size: int  # pixels on each side expected by the encoder
    latent_resolution: int
    max_timestep: int

    def encode_image(self, image: torch.Tensor) -> torch.Tensor:
        """(1, 3, H, W) in [-1, 1] -> (1, C, latent, latent)."""
        ...

    def unconditional_embedding(self) -> torch.Tensor:
        """(1, seq, dim) embedding of the empty prompt."""
        ...

    def add_noise(
        self, latent: torch.Tensor, timestep: int, generator: torch.Generator
    ) -> torch.Tensor:
        ...

    def denoise_step(
        self, noisy_latent: torch.Tensor, timestep: int, embedding: torch.Tensor
    ) -> None:
        """One U-Net forward pass; output is discarded, hooks observe it."""
        ...

    def self_attention_modules(self) -> list[tuple[str, torch.nn.Module]]:
        ...


class StableDiffusionHost:
    """Adapter over a diffusers Stable Diffusion checkpoint."""

    def __init__(self, model_id: str, device: str = "cpu"):
        try:
            from diffusers import AutoencoderKL, DDPMScheduler, UNet2DConditionModel
            from transformers import CLIPTextModel, CLIPTokenizer
        except ImportError as exc:
            raise RuntimeError(
                "Stable Diffusion extraction needs the optional [sd] extras: "
                "pip install 'attnseg-extractor[sd]'"
            ) from exc

        self.model_id = model_id
        self.device = device
        self.vae = AutoencoderKL.from_pretrained(model_id, subfolder="vae").to(device)
        self.unet = UNet2DConditionModel.from_pretrained(
            model_id, subfolder="unet"
        ).to(device)
        self.text_encoder = CLIPTextModel.from_pretrained(
            model_id, subfolder="text_encoder"
        ).to(device)
        self.tokenizer = CLIPTokenizer.from_pretrained(model_id, subfolder="tokenizer")
        self.scheduler = DDPMScheduler.from_pretrained(model_id, subfolder="scheduler")
        self.vae.eval()
        self.unet.eval()
        self.text_encoder.eval()

        self.latent_resolution = int(self.unet.config.sample_size)
        scale = 2 ** (len(self.vae.config.block_out_channels) - 1)
        self.image_size = self.latent_resolution * scale
        self.max_timestep = int(self.scheduler.config.num_train_timesteps) - 1

    def encode_image(self, image: torch.Tensor) -> torch.Tensor:
        with torch.no_grad():
            posterior = self.vae.encode(image.to(self.device)).latent_dist
            return posterior.mode() * self.vae.config.scaling_factor

    def unconditional_embedding(self) -> torch.Tensor:
        tokens = self.tokenizer(
            "",
            padding="max_length",
            max_length=self.tokenizer.model_max_length,
            return_tensors="pt",
        )
        with torch.no_grad():
            return self.text_encoder(tokens.input_ids.to(self.device))[0]

    def add_noise(self, latent, timestep, generator):
        noise = torch.randn(
            latent.shape, generator=generator, dtype=latent.dtype, device="cpu"
        ).to(latent.device)
        t = torch.tensor([timestep], device=latent.device)
        return self.scheduler.add_noise(latent, noise, t)

    def denoise_step(self, noisy_latent, timestep, embedding) -> None:
        with torch.no_grad():
            self.unet(noisy_latent, timestep, encoder_hidden_states=embedding)

    def self_attention_modules(self):
        return [
            (name, module)
            for name, module in self.unet.named_modules()
            if name.endswith("attn1")
        ]
