"""Package version."""
from __future__ import annotations
from collections import namedtuple
import re

RE_VER = re.compile(
    r'''(?x)
    (?P<major>\d+)(?:\.(?P<minor>\d+))?(?:\.(?P<micro>\d+))?
    (?:(?P<type>a|b|rc)(?P<pre>\d+))?
    (?:\.post(?P<post>\d+))?
    (?:\.dev(?P<dev>\d+))?
    '''
)

# Release name -> (PEP 440 suffix, trove development status)
RELEASES = {
    ".dev": ("", "2 - Pre-Alpha"),
    ".dev-alpha": ("a", "2 - Pre-Alpha"),
    ".dev-beta": ("b", "2 - Pre-Alpha"),
    ".dev-candidate": ("rc", "2 - Pre-Alpha"),
    "alpha": ("a", "3 - Alpha"),
    "beta": ("b", "4 - Beta"),
    "candidate": ("rc", "4 - Beta"),
    "final": ("", "5 - Production/Stable")
}

PRE_RELEASES = {"a": "alpha", "b": "beta", "rc": "candidate"}


class Version(namedtuple("Version", ["major", "minor", "micro", "release", "pre", "post", "dev"])):
    """
    Sortable PEP 440 version.

    Release names sort so that every development release precedes `alpha`.
    Pre-releases need an explicit `pre` number; epochs and local versions
    are not supported.

    ```
    Version(0, 1, 0, "final")                    0.1
    Version(0, 1, 2, "beta", pre=1)              0.1.2b1
    Version(0, 2, 0, ".dev", dev=3)              0.2.dev3
    ```
    """

    def __new__(
        cls,
        major: int, minor: int, micro: int, release: str = "final",
        pre: int = 0, post: int = 0, dev: int = 0
    ) -> Version:
        """Validate version info."""

        for value in (major, minor, micro, pre, post, dev):
            if not (isinstance(value, int) and value >= 0):
                raise ValueError("Version parts other than 'release' must be non-negative integers.")
        if release not in RELEASES:
            raise ValueError(f"'{release}' is not a valid release type.")

        is_dev = release < "alpha"
        needs_pre = release not in (".dev", "final")
        if needs_pre and pre == 0:
            raise ValueError("Implicit pre-releases are not allowed.")
        if not needs_pre and pre:
            raise ValueError("Version is not a pre-release.")
        if dev and not is_dev:
            raise ValueError("Version is not a development release.")
        if post and (needs_pre or is_dev):
            raise ValueError("Post-releases are only allowed on final releases.")

        return super().__new__(cls, major, minor, micro, release, pre, post, dev)

    def _get_dev_status(self) -> str:  # pragma: no cover
        """Trove classifier development status."""

        return RELEASES[self.release][1]

    def _get_canonical(self) -> str:
        """Canonical version string."""

        ver = f"{self.major}.{self.minor}"
        if self.micro:
            ver += f".{self.micro}"
        if self.pre:
            ver += f"{RELEASES[self.release][0]}{self.pre}"
        if self.post:
            ver += f".post{self.post}"
        if self.release < "alpha":
            ver += f".dev{self.dev}"
        return ver


def parse_version(ver: str) -> Version:
    """Parse a version string into a `Version`."""

    m = RE_VER.match(ver)
    if m is None:
        raise ValueError(f"'{ver}' is not a valid version")

    major, minor, micro = (int(m.group(g) or 0) for g in ('major', 'minor', 'micro'))
    pre = int(m.group('pre') or 0)
    release = PRE_RELEASES[m.group('type')] if m.group('type') else "final"
    dev = 0
    if m.group('dev'):
        dev = int(m.group('dev'))
        release = '.dev-' + release if pre else '.dev'
    post = int(m.group('post') or 0)
    return Version(major, minor, micro, release, pre, post, dev)


__version_info__ = Version(0, 1, 0, "final")
__version__ = __version_info__._get_canonical()
