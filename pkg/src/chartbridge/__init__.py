"""chartbridge: longitudinal patient records in a language model's context
window, with routing, automations, an interactive chat service, and
continuous output evaluation."""

__version__ = "0.1.0"
