import numpy as np
import pytest

from despecular.imageio import save_image


@pytest.fixture
def pair_tree(tmp_path):
    """Build ROOT/<split>/<source>/{input,gt}/ with random 8-bit images.

    ``layout`` maps (split, source) to a pair count. Ground truth is the
    input plus ``offset`` when given, otherwise an independent image.
    """

    def make(layout, size=(12, 10), offset=None, seed=0):
        rng = np.random.default_rng(seed)
        root = tmp_path / "data"
        for (split, source), n in layout.items():
            for sub in ("input", "gt"):
                (root / split / source / sub).mkdir(parents=True, exist_ok=True)
            for i in range(n):
                img = np.round(rng.random((3, *size)) * 255) / 255
                gt = img + offset if offset is not None else np.round(rng.random((3, *size)) * 255) / 255
                save_image(img, root / split / source / "input" / f"im{i:03d}.png")
                save_image(gt, root / split / source / "gt" / f"im{i:03d}.png")
        return root

    return make
