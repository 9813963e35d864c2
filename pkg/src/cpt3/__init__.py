"""Three-photon coherent population trapping in Ca+: master-equation spectra,
dark-line analysis and comb bookkeeping."""

__version__ = "0.1.0"
