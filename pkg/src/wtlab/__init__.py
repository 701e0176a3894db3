"""wtlab: a desk-scale lab for multichannel speech enhancement.

Room simulation, MVDR beamforming, spatial-cue metrics and a
wavelet/conformer enhancement network, all on top of NumPy.
"""

__version__ = "0.1.0"

from .audio import SAMPLE_RATE, Spectrogram, StftParams, Waveform, istft, stft

__all__ = [
    "SAMPLE_RATE",
    "Spectrogram",
    "StftParams",
    "Waveform",
    "stft",
    "istft",
    "__version__",
]
