"""Regenerates tokens.json using PyJWT as an independent encoder.

    pip install pyjwt cryptography
    python3 generate_vectors.py > tokens.json
"""

import base64
import hashlib
import json

import jwt
from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey
from cryptography.hazmat.primitives.serialization import Encoding, PublicFormat


def b64(data):
    return base64.urlsafe_b64encode(data).rstrip(b"=").decode()


def make_key(index):
    seed = hashlib.sha256(b"captoken-vector-key-%d" % index).digest()
    private = Ed25519PrivateKey.from_private_bytes(seed)
    public = private.public_key().public_bytes(Encoding.Raw, PublicFormat.Raw)
    jwk = {
        "kty": "OKP",
        "crv": "Ed25519",
        "alg": "EdDSA",
        "kid": "key-%d" % index,
        "use": "sig",
        "x": b64(public),
        "d": b64(seed),
    }
    return private, jwk


ISSUERS = ["https://tokens.example.org", "https://issuer.lab.example/ligo", "http://127.0.0.1:8443"]
AUDIENCES = [["https://data.example.org"], ["any"], ["https://a.example", "https://b.example"]]
SCOPES = [
    "read:/ligo/frames",
    "read:/ligo write:/ligo/out",
    "read:/",
    "write:/osgdata/ligo/out",
    "read:/a/b/c read:/a/ab write:/b",
]


def claims_for(i):
    iat = 1_700_000_000 + 97 * i
    claims = {
        "iss": ISSUERS[i % len(ISSUERS)],
        "sub": "user%d@example.org" % (i % 4),
        "aud": AUDIENCES[i % len(AUDIENCES)],
        "scope": SCOPES[i % len(SCOPES)],
        "iat": iat,
        "nbf": iat - (i % 3) * 5,
        "exp": iat + [600, 60, 1, 300][i % 4],
        "jti": "vector-%04d" % i,
    }
    if i % 3 == 1:
        claims["origin"] = "exec-node-%d" % i
    claims["ver"] = "captoken:1.0"
    return claims


def main():
    vectors = []
    for i in range(24):
        private, jwk = make_key(i % 5)
        claims = claims_for(i)
        compact = jwt.encode(claims, private, algorithm="EdDSA", headers={"kid": jwk["kid"]})
        vectors.append({"claims": claims, "key": jwk, "expected_compact": compact, "expected_error": None})

    _, jwk = make_key(0)
    bad = claims_for(100)
    bad["exp"] = bad["iat"] - 1
    vectors.append({"claims": bad, "key": jwk, "expected_compact": None, "expected_error": "InvalidClaims"})

    bad = claims_for(101)
    bad["nbf"] = bad["iat"] + 10
    vectors.append({"claims": bad, "key": jwk, "expected_compact": None, "expected_error": "InvalidClaims"})

    public_only = {k: v for k, v in jwk.items() if k != "d"}
    vectors.append({"claims": claims_for(102), "key": public_only, "expected_compact": None, "expected_error": "MissingPrivateKey"})

    print(json.dumps(vectors, indent=2))


if __name__ == "__main__":
    main()
