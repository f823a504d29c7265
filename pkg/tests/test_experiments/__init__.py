"""Test the teacher, training, reports and the command line."""
