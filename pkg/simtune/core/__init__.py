"""Numeric primitives shared by the encoder, losses and evaluation."""
