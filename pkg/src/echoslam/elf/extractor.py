import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .._validation import check_spectrograms
from .model import ModelParams, TrainConfig, encode, train
from .network import EncoderConfig
from .pairing import PairBatch, make_sampler


class ELFExtractor(TransformerMixin, BaseEstimator):
    """Contrastively trained spectrogram encoder producing unit-norm ELFs.

    ``fit`` trains with the positive-pair regime named by ``pairing``:

    ``"consecutive"``
        ``X`` is an echo sequence; ``groups`` optionally labels separate
        sequences so pairs never bridge two of them.
    ``"distance"``
        ``y`` holds ``(n, 2)`` positions; pairs closer than
        ``distance_threshold`` metres are positives, never across
        ``groups``.
    ``"location"``
        ``y`` holds spot ids; same-spot traces are positives.

    Training starts from ``init_params`` when given, from the previous fit
    when ``warm_start`` is set, and from a seeded random initialisation
    otherwise.
    """

    def __init__(self, conv_channels=(16, 32, 64, 128), embed_dim=128, head_layers=3, head_width=128,
                 temperature=0.5, batch_pairs=256, learning_rate=1e-3, steps=1000, pairing="consecutive",
                 distance_threshold=0.20, input_scaling="zscore", warm_start=False, random_state=0):
        self.conv_channels = conv_channels
        self.embed_dim = embed_dim
        self.head_layers = head_layers
        self.head_width = head_width
        self.temperature = temperature
        self.batch_pairs = batch_pairs
        self.learning_rate = learning_rate
        self.steps = steps
        self.pairing = pairing
        self.distance_threshold = distance_threshold
        self.input_scaling = input_scaling
        self.warm_start = warm_start
        self.random_state = random_state

    def _encoder_config(self):
        return EncoderConfig(tuple(self.conv_channels), self.embed_dim, self.head_layers, self.head_width,
                             input_scaling=self.input_scaling)

    def _seeds(self):
        ss = np.random.SeedSequence(int(self.random_state))
        init_ss, data_ss = ss.spawn(2)
        return int(init_ss.generate_state(1)[0]), data_ss

    def fit(self, X, y=None, groups=None, init_params=None):
        X = check_spectrograms(X, dtype=np.float32)
        init_seed, data_ss = self._seeds()
        if init_params is not None:
            params = init_params.astype(np.float32)
        elif self.warm_start and hasattr(self, "params_"):
            params = self.params_
        else:
            params = ModelParams.initialize(self._encoder_config(), init_seed)
        sampler = make_sampler(self.pairing, len(X), y, self.distance_threshold, groups)
        rng = np.random.default_rng(data_ss)

        def stream():
            while True:
                idx = sampler.sample(self.batch_pairs, rng)
                yield PairBatch(X[idx], idx)

        cfg = TrainConfig(self.steps, self.learning_rate, self.temperature, self.batch_pairs)
        self.params_, self.loss_curve_ = train(params, stream(), cfg)
        self.n_features_in_ = int(np.prod(X.shape[1:]))
        return self

    def transform(self, X):
        check_is_fitted(self, "params_")
        return encode(self.params_, check_spectrograms(X, dtype=np.float32))

    @classmethod
    def from_params(cls, params, **kwargs):
        cfg = params.config
        est = cls(conv_channels=cfg.conv_channels, embed_dim=cfg.embed_dim, head_layers=cfg.head_layers,
                  head_width=cfg.head_width, input_scaling=cfg.input_scaling, **kwargs)
        est.params_ = params
        est.loss_curve_ = np.zeros(0)
        est.n_features_in_ = int(np.prod(cfg.input_shape))
        return est
