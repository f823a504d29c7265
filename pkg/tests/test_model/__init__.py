"""Test the tape, attention and product attention."""
