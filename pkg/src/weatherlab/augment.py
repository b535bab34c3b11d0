"""Prompt recipes and their sequential application through an image-edit backend.

A recipe is an ordered list of (prompt, guidance scale, inference steps) edits
for one weather condition; steps are applied strictly in order, each step's
output feeding the next. The production editor sits behind an HTTP backend;
a deterministic mock backend stands in for tests and offline runs.
"""

from __future__ import annotations

import base64
import hashlib
import io
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import requests
from PIL import Image

from .schema import (
    DatasetManifest,
    Framework,
    ImageRecord,
    Provenance,
    ReviewState,
    WeatherCondition,
)


@dataclass(frozen=True)
class EditStep:
    prompt: str
    guidance_scale: float
    inference_steps: int

    def __post_init__(self):
        if not self.prompt:
            raise ValueError("prompt must be non-empty")
        if self.guidance_scale <= 0:
            raise ValueError(f"guidance_scale must be > 0, got {self.guidance_scale}")
        if self.inference_steps < 1:
            raise ValueError(f"inference_steps must be >= 1, got {self.inference_steps}")


@dataclass(frozen=True)
class Recipe:
    id: str
    framework: Framework
    condition: WeatherCondition
    steps: tuple[EditStep, ...]

    def __post_init__(self):
        if self.condition is WeatherCondition.DEFAULT:
            raise ValueError("recipes target adverse conditions, not default")
        if len(self.steps) < 1:
            raise ValueError("recipe needs at least one step")


@dataclass(frozen=True)
class EditRequest:
    image: bytes
    prompt: str
    guidance_scale: float
    inference_steps: int
    seed: int


@dataclass(frozen=True)
class EditResponse:
    image: bytes
    backend_info: str


class BackendError(Exception):
    """The edit backend failed or violated the protocol."""


_SIMULATED_RECIPES = (
    Recipe(
        id="sim_rain",
        framework=Framework.SIMULATED,
        condition=WeatherCondition.RAIN,
        steps=(
            EditStep("What would it look if it were raining a lot?", 1.45, 100),
            EditStep("Add raindrops on the camera lens.", 1.65, 100),
        ),
    ),
    Recipe(
        id="sim_fog",
        framework=Framework.SIMULATED,
        condition=WeatherCondition.FOG,
        steps=(EditStep("Add dense fog to the image.", 1.9, 100),),
    ),
    Recipe(
        id="sim_night",
        framework=Framework.SIMULATED,
        condition=WeatherCondition.NIGHT,
        steps=(
            EditStep("What would it look like at night?", 1.5, 100),
            EditStep("Add a lot of darkness.", 1.75, 100),
        ),
    ),
)

_REAL_WORLD_RECIPES = (
    Recipe(
        id="real_rain",
        framework=Framework.REAL_WORLD,
        condition=WeatherCondition.RAIN,
        steps=(
            EditStep("What would it look if it were raining a lot?", 1.35, 250),
            EditStep("Add raindrops on the camera lens.", 2.0, 200),
        ),
    ),
    Recipe(
        id="real_fog",
        framework=Framework.REAL_WORLD,
        condition=WeatherCondition.FOG,
        steps=(EditStep("Add dense fog to the image.", 1.9, 100),),
    ),
    Recipe(
        id="real_night",
        framework=Framework.REAL_WORLD,
        condition=WeatherCondition.NIGHT,
        steps=(
            EditStep("What would it look like at night?", 1.5, 100),
            EditStep("Add a lot of darkness.", 1.75, 100),
        ),
    ),
    Recipe(
        id="real_snow",
        framework=Framework.REAL_WORLD,
        condition=WeatherCondition.SNOW,
        steps=(
            EditStep("What would it look like were snowing?", 1.25, 150),
            EditStep("Add snowflakes falling from the sky.", 1.5, 125),
        ),
    ),
)


def builtin_recipes(framework: Framework) -> list[Recipe]:
    """The built-in per-condition prompt sequences for a framework.

    Snow exists only in the real-world set; the simulator cannot render it,
    so there is nothing to pair augmented snow images with there.
    """
    if framework is Framework.SIMULATED:
        return list(_SIMULATED_RECIPES)
    return list(_REAL_WORLD_RECIPES)


def parse_recipes(document: bytes) -> list[Recipe]:
    """Parse a user-supplied recipe file (JSON list)."""
    raw = json.loads(document.decode("utf-8"))
    recipes = []
    for obj in raw:
        recipes.append(Recipe(
            id=obj["id"],
            framework=Framework(obj["framework"]),
            condition=WeatherCondition(obj["condition"]),
            steps=tuple(
                EditStep(s["prompt"], float(s["guidance_scale"]), int(s["inference_steps"]))
                for s in obj["steps"]
            ),
        ))
    return recipes


def recipes_to_json(recipes: list[Recipe]) -> bytes:
    out = [
        {
            "id": r.id,
            "framework": r.framework.value,
            "condition": r.condition.value,
            "steps": [
                {
                    "prompt": s.prompt,
                    "guidance_scale": s.guidance_scale,
                    "inference_steps": s.inference_steps,
                }
                for s in r.steps
            ],
        }
        for r in recipes
    ]
    return (json.dumps(out, indent=2) + "\n").encode("utf-8")


# --------------------------------------------------------------------------
# Backends
# --------------------------------------------------------------------------

def _decode_rgb(data: bytes) -> np.ndarray:
    try:
        return np.asarray(Image.open(io.BytesIO(data)).convert("RGB"), dtype=np.uint8)
    except Exception as exc:
        raise BackendError(f"undecodable image: {exc}") from exc


def _encode_png(pixels: np.ndarray) -> bytes:
    buffer = io.BytesIO()
    Image.fromarray(pixels.astype(np.uint8), mode="RGB").save(buffer, format="PNG")
    return buffer.getvalue()


def image_size(data: bytes) -> tuple[int, int]:
    with Image.open(io.BytesIO(data)) as im:
        return im.size


class MockBackend:
    """Deterministic stand-in for the diffusion editor.

    Output is a pure function of (image, prompt keywords, guidance scale,
    seed). Unknown prompts return the input bytes unchanged; the designated
    test prompt "hallucinate" erases a seeded rectangle so the review flow has
    something to reject.
    """

    info = "mock"

    def edit(self, request: EditRequest) -> EditResponse:
        prompt = request.prompt.lower()
        if "hallucinate" in prompt:
            out = self._erase_rectangle(request)
        elif "fog" in prompt:
            out = self._whiten(request)
        elif "rain" in prompt:
            out = self._rain(request)
        elif "night" in prompt or "darkness" in prompt:
            out = self._darken(request)
        elif "snow" in prompt:
            out = self._snow(request)
        else:
            # Identity, byte-exact: no decode/re-encode round trip.
            _decode_rgb(request.image)
            return EditResponse(image=request.image, backend_info=self.info)
        return EditResponse(image=_encode_png(out), backend_info=self.info)

    @staticmethod
    def _rng(request: EditRequest) -> np.random.Generator:
        return np.random.default_rng(request.seed)

    def _whiten(self, request: EditRequest) -> np.ndarray:
        pixels = _decode_rgb(request.image).astype(np.float64)
        alpha = min(0.95, 0.25 * request.guidance_scale)
        return np.round(pixels * (1.0 - alpha) + 255.0 * alpha)

    def _darken(self, request: EditRequest) -> np.ndarray:
        pixels = _decode_rgb(request.image).astype(np.float64)
        factor = max(0.1, 1.0 - 0.3 * request.guidance_scale)
        return np.floor(pixels * factor)

    def _rain(self, request: EditRequest) -> np.ndarray:
        pixels = _decode_rgb(request.image).copy()
        height, width = pixels.shape[:2]
        rng = self._rng(request)
        streaks = max(4, (width * height) // 300)
        for _ in range(streaks):
            x = int(rng.integers(0, width))
            y = int(rng.integers(0, height))
            length = int(rng.integers(2, max(3, height // 6)))
            for step in range(length):
                yy, xx = y + step, min(width - 1, x + step // 4)
                if yy >= height:
                    break
                pixels[yy, xx] = np.minimum(255, pixels[yy, xx].astype(np.int64) + 90)
        return pixels

    def _snow(self, request: EditRequest) -> np.ndarray:
        pixels = _decode_rgb(request.image).copy()
        height, width = pixels.shape[:2]
        rng = self._rng(request)
        flakes = max(8, (width * height) // 120)
        ys = rng.integers(0, height, size=flakes)
        xs = rng.integers(0, width, size=flakes)
        pixels[ys, xs] = 255
        return pixels

    def _erase_rectangle(self, request: EditRequest) -> np.ndarray:
        pixels = _decode_rgb(request.image).copy()
        height, width = pixels.shape[:2]
        rng = self._rng(request)
        rect_w = max(1, width // 2)
        rect_h = max(1, height // 2)
        x0 = int(rng.integers(0, max(1, width - rect_w + 1)))
        y0 = int(rng.integers(0, max(1, height - rect_h + 1)))
        fill = pixels.reshape(-1, 3).mean(axis=0).astype(np.uint8)
        pixels[y0:y0 + rect_h, x0:x0 + rect_w] = fill
        return pixels


class HttpBackend:
    """Client for the remote editor: POST /v1/edit, retrying transient failures."""

    def __init__(self, base_url: str, retries: int = 2, backoff_seconds: float = 0.5,
                 timeout_seconds: float = 300.0):
        self.base_url = base_url.rstrip("/")
        self.retries = retries
        self.backoff_seconds = backoff_seconds
        self.timeout_seconds = timeout_seconds
        self.info = base_url

    def edit(self, request: EditRequest) -> EditResponse:
        body = {
            "image_b64": base64.b64encode(request.image).decode("ascii"),
            "prompt": request.prompt,
            "guidance_scale": request.guidance_scale,
            "num_inference_steps": request.inference_steps,
            "seed": request.seed,
        }
        attempt = 0
        while True:
            retryable = False
            try:
                response = requests.post(
                    f"{self.base_url}/v1/edit", json=body, timeout=self.timeout_seconds,
                )
                if response.status_code == 200:
                    payload = response.json()
                    return EditResponse(
                        image=base64.b64decode(payload["image_b64"]),
                        backend_info=str(payload.get("backend_info", "")),
                    )
                retryable = response.status_code >= 500
                error = BackendError(f"backend returned {response.status_code}: {response.text[:200]}")
            except requests.RequestException as exc:
                retryable = True
                error = BackendError(f"transport error: {exc}")
            if not retryable or attempt >= self.retries:
                raise error
            time.sleep(self.backoff_seconds * (2 ** attempt))
            attempt += 1


def make_backend(spec: str) -> MockBackend | HttpBackend:
    """"mock" or a base URL."""
    if spec == "mock":
        return MockBackend()
    return HttpBackend(spec)


# --------------------------------------------------------------------------
# Recipe application and orchestration
# --------------------------------------------------------------------------

def stable_seed(*parts: object) -> int:
    """63-bit seed derived from the parts; stable across processes and runs."""
    digest = hashlib.sha256("\x1f".join(str(p) for p in parts).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") >> 1


def apply_recipe(
    image: bytes,
    recipe: Recipe,
    backend,
    seed: int,
) -> tuple[bytes, list[tuple[str, float, int]]]:
    """Apply a recipe's steps strictly in order, each output feeding the next step.

    The backend's sampler seed is passed through on every step. A dimension
    change from the backend is a protocol violation.
    """
    expected_size = image_size(image)
    current = image
    applied: list[tuple[str, float, int]] = []
    for index, step in enumerate(recipe.steps):
        request = EditRequest(
            image=current,
            prompt=step.prompt,
            guidance_scale=step.guidance_scale,
            inference_steps=step.inference_steps,
            seed=seed,
        )
        try:
            response = backend.edit(request)
        except BackendError as exc:
            raise BackendError(f"recipe {recipe.id} step {index}: {exc}") from exc
        got_size = image_size(response.image)
        if got_size != expected_size:
            raise BackendError(
                f"recipe {recipe.id} step {index}: backend changed image size "
                f"{expected_size} -> {got_size}"
            )
        current = response.image
        applied.append((step.prompt, step.guidance_scale, step.inference_steps))
    return current, applied


@dataclass
class AugmentationFailure:
    source_id: str
    recipe_id: str
    message: str


class AugmentationError(Exception):
    """Some images failed; carries the failures and the manifest of completed work."""

    def __init__(self, failures: list[AugmentationFailure], manifest: DatasetManifest):
        self.failures = failures
        self.manifest = manifest
        super().__init__(f"{len(failures)} augmentation job(s) failed")


def augmented_image_name(source_id: str, recipe_id: str) -> str:
    return f"{source_id}__{recipe_id}.png"


def run_augmentation(
    manifest: DatasetManifest,
    recipes: list[Recipe],
    backend,
    seed: int,
    max_in_flight: int = 4,
    *,
    image_root: Path,
    out_dir: Path,
    image_path_prefix: str = "",
) -> DatasetManifest:
    """Augment every default-condition record with every recipe.

    Each (source, recipe) pair appends one pending-review record whose
    per-image seed is a stable hash of (seed, source id, recipe id), so reruns
    and parallelism cannot change outputs. Per-image failures are collected;
    the rest of the run completes, then AugmentationError reports them along
    with the manifest of everything that succeeded.
    """
    if not recipes:
        raise ValueError("need at least one recipe")
    for recipe in recipes:
        if recipe.framework is not manifest.framework:
            raise ValueError(
                f"recipe {recipe.id} targets {recipe.framework.value} but the manifest "
                f"is {manifest.framework.value}"
            )
    sources = [r for r in manifest.records if r.condition is WeatherCondition.DEFAULT]
    jobs = [(record, recipe) for record in sources for recipe in recipes]
    out_dir.mkdir(parents=True, exist_ok=True)

    def run_job(job: tuple[ImageRecord, Recipe]) -> ImageRecord:
        record, recipe = job
        source_path = image_root / record.image_path
        image = source_path.read_bytes()
        per_image_seed = stable_seed(seed, record.id, recipe.id)
        edited, _ = apply_recipe(image, recipe, backend, per_image_seed)
        name = augmented_image_name(record.id, recipe.id)
        (out_dir / name).write_bytes(edited)
        return ImageRecord(
            id=f"{record.id}__{recipe.id}",
            image_path=image_path_prefix + name,
            condition=recipe.condition,
            provenance=Provenance.AUGMENTED,
            review_state=ReviewState.PENDING,
            source_id=record.id,
            recipe_id=recipe.id,
            annotations=record.annotations,
        )

    new_records: list[ImageRecord] = []
    failures: list[AugmentationFailure] = []
    with ThreadPoolExecutor(max_workers=max(1, max_in_flight)) as pool:
        outcomes = pool.map(
            lambda job: (job, _try_job(run_job, job)), jobs,
        )
        for (record, recipe), (result, error) in outcomes:
            if error is not None:
                failures.append(AugmentationFailure(record.id, recipe.id, error))
            else:
                new_records.append(result)

    new_records.sort(key=lambda r: r.id)
    result_manifest = DatasetManifest(
        framework=manifest.framework,
        records=manifest.records + tuple(new_records),
        split_assignment=dict(manifest.split_assignment),
    )
    if failures:
        raise AugmentationError(failures, result_manifest)
    return result_manifest


def _try_job(fn, job):
    try:
        return fn(job), None
    except (OSError, BackendError, ValueError) as exc:
        return None, str(exc)
