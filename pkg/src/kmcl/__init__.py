"""Kernel-based multilabel contrastive learning."""
