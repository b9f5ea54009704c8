"""Supported upstream models: emitted dimension and s3prl hub names.

The dimension table is shared contract with the feature-file consumer;
files the bridge writes must declare exactly these dimensions.
"""

UPSTREAM_DIMS = {
    "PASE+": 256,
    "vq_wav2vec": 512,
    "wav2vec": 512,
    "TERA": 768,
    "AALBERT": 768,
    "Mockingjay": 768,
    "APC": 512,
    "NPC": 512,
    "DeCoAR": 2048,
}

S3PRL_NAMES = {
    "PASE+": "pase_plus",
    "vq_wav2vec": "vq_wav2vec",
    "wav2vec": "wav2vec",
    "TERA": "tera",
    "AALBERT": "audio_albert",
    "Mockingjay": "mockingjay",
    "APC": "apc",
    "NPC": "npc",
    "DeCoAR": "decoar",
}

TARGET_RATE = 100.0
AUDIO_RATE = 16000


class BridgeError(Exception):
    """Any bridge failure; carries the process exit code."""

    exit_code = 1


class UnknownUpstreamError(BridgeError):
    exit_code = 1


class AudioError(BridgeError):
    exit_code = 2


def upstream_dim(name: str) -> int:
    try:
        return UPSTREAM_DIMS[name]
    except KeyError:
        raise UnknownUpstreamError(
            f"unknown upstream {name!r}; supported: {sorted(UPSTREAM_DIMS)}") from None
