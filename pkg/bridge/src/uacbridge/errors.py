class BridgeError(Exception):
    """Any failure the bridge can attribute to its inputs."""


class AudioError(BridgeError):
    """Unreadable, empty, or unsupported audio."""


class AlignmentError(BridgeError):
    """Alignment file missing, malformed, or inconsistent with the audio."""
