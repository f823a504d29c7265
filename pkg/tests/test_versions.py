"""Version tests."""
import unittest
import measureformer as mf
from measureformer.__meta__ import RELEASES, Version, parse_version


class TestVersion(unittest.TestCase):
    """Test versions."""

    def test_version_output(self):
        """Test that versions generate proper strings."""

        cases = [
            (Version(0, 1, 0, "final"), "0.1"),
            (Version(1, 2, 3, "final"), "1.2.3"),
            (Version(1, 2, 0, "alpha", pre=4), "1.2a4"),
            (Version(1, 2, 0, "candidate", pre=4), "1.2rc4"),
            (Version(1, 2, 0, "final", post=1), "1.2.post1"),
            (Version(1, 2, 3, ".dev-alpha", pre=1), "1.2.3a1.dev0"),
            (Version(1, 2, 3, ".dev", dev=1), "1.2.3.dev1")
        ]
        for version, text in cases:
            self.assertEqual(version._get_canonical(), text)

    def test_version_comparison(self):
        """Development releases sort before pre-releases, pre-releases before finals."""

        self.assertLess(Version(0, 1, 0, "final"), Version(0, 2, 0, "final"))
        self.assertLess(Version(1, 2, 0, "alpha", pre=4), Version(1, 2, 0, "final"))
        self.assertLess(Version(1, 2, 0, "final"), Version(1, 2, 0, "final", post=1))
        self.assertLess(Version(1, 2, 3, ".dev-beta", pre=2), Version(1, 2, 3, "beta", pre=2))
        self.assertLess(Version(1, 2, 3, ".dev"), Version(1, 2, 3, ".dev-beta", pre=2))

    def test_version_parsing(self):
        """Canonical strings parse back to the same version."""

        for version in (
            Version(1, 0, 0, "final"),
            Version(1, 2, 0, "beta", pre=4),
            Version(1, 2, 0, "final", post=1),
            Version(1, 2, 3, ".dev-alpha", pre=1),
            Version(1, 2, 3, ".dev"),
            Version(1, 2, 3, ".dev", dev=1)
        ):
            self.assertEqual(parse_version(version._get_canonical()), version)

    def test_package_version(self):
        """The published version string is canonical."""

        self.assertEqual(parse_version(mf.__version__), mf.__version_info__)
        self.assertIn(mf.__version_info__.release, RELEASES)

    def test_asserts(self):
        """Test asserts."""

        with self.assertRaises(ValueError):
            Version("1", "2", "3")
        with self.assertRaises(ValueError):
            Version(1, 2, 3, "bad")
        with self.assertRaises(ValueError):
            Version(1, 2, 3, "alpha")
        with self.assertRaises(ValueError):
            Version(1, 2, 3, "alpha", pre=1, dev=1)
        with self.assertRaises(ValueError):
            Version(1, 2, 3, ".dev-alpha", pre=1, post=1)
        with self.assertRaises(ValueError):
            Version(1, 2, 3, pre=1)
        with self.assertRaises(ValueError):
            Version(1, 2, 3, dev=1)
        with self.assertRaises(ValueError):
            parse_version('bad&version')
