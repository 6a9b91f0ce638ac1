"""Tests for otprop."""
