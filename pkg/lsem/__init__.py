"""EM identification of continuous-time state-space models from
Lebesgue-sampled (send-on-delta) outputs."""
