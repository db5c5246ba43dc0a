"""
Cepstral features from a synthetic utterance
============================================

Builds the mel and gammatone filterbanks, runs the front-end on one
generated utterance and looks at the resulting 60-column matrix.
"""

import numpy as np

from ivnli import FrontendConfig, SynthSpec, extract_features
from ivnli.frontend import build_filterbank
from ivnli.synth import synthesize_utterance

# Default front-end: 26 bands over 20-8000 Hz, 20 cepstra, 60 ms / 10 ms.
cfg = FrontendConfig()
print(cfg.to_text())

# The two filterbank families share band count and edges but differ in
# where the centres sit and how wide each band is.
mel = build_filterbank(cfg, 16000)
gt = build_filterbank(FrontendConfig(filterbank_family="gammatone"), 16000)
print("mel centres (Hz):      ", np.round(mel.center_freqs[:6]).astype(int), "...")
print("gammatone centres (Hz):", np.round(gt.center_freqs[:6]).astype(int), "...")
# Mel triangles peak near one (centres fall between FFT bins);
# gammatone rows are scaled to unit sum.
print("mel row peaks:", np.round(mel.weights.max(1)[:4], 3))
print("gammatone row sums:", np.round(gt.weights.sum(1)[:4], 3))

# One second of audio for the first synthetic class.
spec = SynthSpec(duration_s=1.0)
audio = synthesize_utterance(spec, spec.class_signatures()[0], np.random.default_rng(0))
feats = extract_features(audio, cfg)
print("features:", feats.frames.shape, "at", feats.frame_rate, "frames/s")

# Columns 0-19 are cepstra, 20-39 deltas, 40-59 delta-deltas.
ceps, delta, ddelta = np.split(feats.frames, 3, axis=1)
print("cepstral std  ", np.round(ceps.std(0)[:5], 3))
print("delta std     ", np.round(delta.std(0)[:5], 3))
print("delta-delta std", np.round(ddelta.std(0)[:5], 3))
