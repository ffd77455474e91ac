# sisfactor/commands/__init__.py
from . import fit, prior_check, simulate, summarize

# CLI name -> module exposing run(config, out_dir, settings, metrics)
COMMANDS = {
    "fit": fit,
    "simulate": simulate,
    "prior-check": prior_check,
    "summarize": summarize,
}
