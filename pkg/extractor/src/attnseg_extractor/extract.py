"""Extraction of one image's self-attention tensor set.

The image is encoded to the latent space, noised to the configured
timestep, and denoised once with the unconditional embedding while
attention hooks record every self-attention layer's probability matrix.
Matrices are averaged over heads, reshaped to (w, w, w, w) row-major,
exported as float32 tensor files, and indexed by a manifest.
"""

from __future__ import annotations

import os
from collections import Counter
from dataclasses import dataclass, field

import numpy as np
import torch
from PIL import Image

from . import adzt
from .capture import AttentionRecorder
from .host import HostModel


@dataclass
class ExtractionJob:
    image_path: str
    output_dir: str
    timestep: int = 300
    seed: int = 0
    image_id: str | None = None


@dataclass
class ExtractionResult:
    manifest_path: str
    tensor_paths: list[str]
    census: dict[int, int]
    warnings: list[str] = field(default_factory=list)


def expected_census(latent_resolution: int) -> dict[int, int]:
    """Layer census of a Stable-Diffusion-class U-Net at this latent size."""
    r = latent_resolution
    return {r: 5, r // 2: 5, r // 4: 5, r // 8: 1}


def load_image(path: str, size: int) -> torch.Tensor:
    image = Image.open(path).convert("RGB").resize((size, size), Image.BILINEAR)
    array = np.asarray(image, dtype=np.float32) / 127.5 - 1.0
    return torch.from_numpy(array).permute(2, 0, 1).unsqueeze(0)


def run_extraction(host: HostModel, job: ExtractionJob) -> ExtractionResult:
    if not 0 <= job.timestep <= host.max_timestep:
        raise ValueError(
            f"timestep {job.timestep} outside the model range "
            f"[0, {host.max_timestep}]"
        )
    image = load_image(job.image_path, host.image_size)
    latent = host.encode_image(image)
    generator = torch.Generator(device="cpu").manual_seed(job.seed)
    noisy = host.add_noise(latent, job.timestep, generator)
    embedding = host.unconditional_embedding()

    modules = host.self_attention_modules()
    if not modules:
        raise RuntimeError("host exposes no self-attention modules")
    with AttentionRecorder(modules) as recorder:
        host.denoise_step(noisy, job.timestep, embedding)
        captured = recorder.captured()

    census = dict(Counter(c.resolution for c in captured))
    census = dict(sorted(census.items(), reverse=True))
    warnings = []
    expected = expected_census(host.latent_resolution)
    if census != expected:
        warnings.append(f"layer census {census} differs from expected {expected}")
    if host.latent_resolution not in census:
        raise RuntimeError(
            f"no self-attention layer at the latent resolution "
            f"{host.latent_resolution}; census {census}"
        )

    os.makedirs(job.output_dir, exist_ok=True)
    image_id = job.image_id or os.path.splitext(os.path.basename(job.image_path))[0]
    entries = []
    tensor_paths = []
    for layer_id, cap in enumerate(captured):
        name = f"layer_{layer_id:02d}_res{cap.resolution}.adzt"
        path = os.path.join(job.output_dir, name)
        adzt.write_tensor(cap.as_4d(), path)
        tensor_paths.append(path)
        entries.append(
            {"layer_id": layer_id, "resolution": cap.resolution, "file": name}
        )

    info = (
        f"extractor: model={host.model_id} heads=mean dtype=float32 "
        f"seed={job.seed} census=" + ",".join(f"{r}:{n}" for r, n in census.items())
    )
    if warnings:
        info += " warning=" + "; ".join(warnings)
    manifest_path = os.path.join(job.output_dir, "manifest.json")
    adzt.write_manifest(
        manifest_path,
        image_id=image_id,
        latent_resolution=host.latent_resolution,
        timestep=job.timestep,
        extractor_info=info,
        entries=entries,
    )
    return ExtractionResult(
        manifest_path=manifest_path,
        tensor_paths=tensor_paths,
        census=census,
        warnings=warnings,
    )
