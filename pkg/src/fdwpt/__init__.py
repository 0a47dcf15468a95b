"""Joint beamforming and time splitting for a full-duplex wireless-powered MIMO link."""

from .model import SystemParams, ChannelRealization, CovarianceModel, BeamformerSolution

__version__ = "0.1.0"

__all__ = ["SystemParams", "ChannelRealization", "CovarianceModel", "BeamformerSolution"]
