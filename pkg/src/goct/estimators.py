"""sklearn-style facades over the functional core.

These wrap feature extraction, the token codec, and the generator in
fit/transform/predict estimators so they compose with sklearn
pipelines and grid tooling.  The underlying functions stay importable
for callers that do not want the estimator shape.
"""

from __future__ import annotations

from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from goct.chartcore.chart import Chart
from goct.errors import ValidationError
from goct.featureext import apply_normalization, extract
from goct.nnmodel.config import ModelConfig
from goct.nnmodel.generate import generate_chart
from goct.nnmodel.net import ModelParams
from goct.nnmodel.train import TrainSample, finetune, train
from goct.tokencodec import decode_stream, encode_chart


class BeatMelExtractor(BaseEstimator, TransformerMixin):
    """Beat-aligned log-Mel features with per-bin train-set normalization.

    fit expects an iterable of (AudioBuffer, TempoMap, n_beats) triples;
    transform maps the same shape of input to normalized frame matrices.
    """

    def __init__(self, normalize: bool = True):
        self.normalize = normalize

    def fit(self, X, y=None):
        frames = [extract(audio, tempo, n_beats).frames for audio, tempo, n_beats in X]
        if not frames:
            raise ValidationError("BeatMelExtractor.fit needs at least one song")
        stacked = np.concatenate(frames, axis=0)
        self.mean_ = stacked.mean(axis=0, dtype=np.float64).astype(np.float32)
        self.std_ = np.maximum(stacked.std(axis=0, dtype=np.float64), 1e-6).astype(np.float32)
        self.n_songs_ = len(frames)
        return self

    def transform(self, X):
        check_is_fitted(self, "mean_")
        out = []
        for audio, tempo, n_beats in X:
            frames = extract(audio, tempo, n_beats).frames
            out.append(apply_normalization(frames, self.mean_, self.std_) if self.normalize else frames)
        return out


class ChartTokenCodec(BaseEstimator, TransformerMixin):
    """Stateless Chart <-> window-token transformer."""

    def fit(self, X, y=None):
        self.fitted_ = True
        return self

    def transform(self, X):
        return [encode_chart(chart) for chart in X]

    def inverse_transform(self, X):
        return [decode_stream(windows) for windows in X]


class ChartGenerator(BaseEstimator):
    """Trainable wrapper: fit on TrainSamples, predict Charts.

    predict expects (BeatSpectrogram, TempoMap, difficulty) triples.
    """

    def __init__(
        self,
        config: Optional[ModelConfig] = None,
        lr: float = 2e-4,
        batch_size: int = 32,
        epochs: int = 10,
        seed: int = 0,
    ):
        self.config = config
        self.lr = lr
        self.batch_size = batch_size
        self.epochs = epochs
        self.seed = seed

    def fit(self, X, y=None):
        for s in X:
            if not isinstance(s, TrainSample):
                raise ValidationError("ChartGenerator.fit expects TrainSample instances")
        result = train(
            list(X),
            self.config or ModelConfig(),
            lr=self.lr,
            batch_size=self.batch_size,
            epochs=self.epochs,
            seed=self.seed,
        )
        self.params_: ModelParams = result.params
        self.history_ = result.history
        return self

    def partial_fit(self, X, *, lr: float = 2e-5, epochs: int = 4):
        """Finetune the already-fitted model on new samples."""
        check_is_fitted(self, "params_")
        result = finetune(self.params_, list(X), lr=lr, epochs=epochs, seed=self.seed)
        self.params_ = result.params
        self.history_ = self.history_ + result.history
        return self

    def predict(self, X) -> list[Chart]:
        check_is_fitted(self, "params_")
        return [generate_chart(self.params_, spec, tempo, diff) for spec, tempo, diff in X]
