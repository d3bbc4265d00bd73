import cp_certify
from cp_certify import exception
from cp_certify.exception import CPCertifyException, RankCapExceeded


def test_package_exports_only_exceptions():
    for name in exception.__all__:
        assert issubclass(getattr(cp_certify, name), CPCertifyException)
    assert not hasattr(cp_certify, "Any")
    assert not hasattr(cp_certify, "Optional")


def test_exception_rendering():
    e = RankCapExceeded(9, 8, layer=0)
    assert isinstance(e, ValueError)
    message = "layer 0: rank 9 exceeds the polyadic rank cap 8"
    assert repr(e) == f"<RankCapExceeded: {message}>"
    assert e.to_dict() == {"error": "RankCapExceeded", "message": message}
