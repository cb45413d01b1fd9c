"""
GPND — Dataset Download
Fetches the MNIST / Fashion-MNIST IDX files into a local cache directory.
Files already present are reused; downloads are written atomically.
"""

import logging
import os

import requests

from gpnd.config import DATA_DIR, DOWNLOAD_TIMEOUT_SECONDS, PROXY_URL
from gpnd.errors import ConfigError, DataError
from gpnd.persistence import atomic_write_bytes

log = logging.getLogger(__name__)

DATASET_URLS = {
    "mnist": "https://ossci-datasets.s3.amazonaws.com/mnist/",
    "fashion-mnist": "http://fashion-mnist.s3-website.eu-central-1.amazonaws.com/",
}

IDX_FILES = (
    "train-images-idx3-ubyte.gz",
    "train-labels-idx1-ubyte.gz",
    "t10k-images-idx3-ubyte.gz",
    "t10k-labels-idx1-ubyte.gz",
)


def fetch_dataset(name: str, dest_dir: str | None = None) -> list[str]:
    """Download the four IDX files of ``name`` into ``dest_dir/name``.

    Returns the local paths in IDX_FILES order.
    """
    if name not in DATASET_URLS:
        raise ConfigError(f"unknown dataset {name!r}; choose from {sorted(DATASET_URLS)}")
    target = os.path.join(dest_dir or DATA_DIR, name)
    paths = []
    for filename in IDX_FILES:
        path = os.path.join(target, filename)
        if os.path.exists(path) and os.path.getsize(path) > 0:
            log.info("Using cached %s", path)
        else:
            payload = _download(DATASET_URLS[name] + filename)
            atomic_write_bytes(path, payload)
            log.info("Downloaded %s (%d bytes)", path, len(payload))
        paths.append(path)
    return paths


def find_idx_pair(directory: str, split: str) -> tuple[str, str] | None:
    """Locate ``<split>`` image and label files, gzipped or not, in ``directory``."""
    if split not in ("train", "t10k"):
        raise ConfigError(f"split must be 'train' or 't10k', got {split!r}")
    found = []
    for kind, dims in (("images", 3), ("labels", 1)):
        candidates = [
            f"{split}-{kind}-idx{dims}-ubyte",
            f"{split}-{kind}.idx{dims}-ubyte",
        ]
        match = next(
            (os.path.join(directory, c + ext)
             for c in candidates for ext in ("", ".gz")
             if os.path.isfile(os.path.join(directory, c + ext))),
            None,
        )
        if match is None:
            return None
        found.append(match)
    return found[0], found[1]


# ─── Internal helpers ─────────────────────────────────────────────────────────

def _download(url: str) -> bytes:
    """GET ``url`` trying the configured proxy, then environment proxies, then direct."""
    attempts = []
    if PROXY_URL:
        attempts.append(("configured-proxy", False, {"http": PROXY_URL, "https": PROXY_URL}))
    attempts.append(("environment-proxy", True, None))
    attempts.append(("direct", False, {}))

    for mode, trust_env, proxies in attempts:
        session = requests.Session()
        session.trust_env = trust_env
        try:
            response = session.get(url, timeout=DOWNLOAD_TIMEOUT_SECONDS, proxies=proxies)
            response.raise_for_status()
            return response.content
        except requests.exceptions.ProxyError as exc:
            log.warning("Download proxy failed (%s): %s", mode, exc)
            continue
        except requests.exceptions.HTTPError as exc:
            raise DataError(f"download of {url} failed: {exc}") from exc
        except requests.exceptions.RequestException as exc:
            log.warning("Download failed (%s): %s", mode, exc)
            continue
        finally:
            session.close()

    raise DataError(f"all download attempts failed for {url}")
