"""Binary packet and sideband format round trips."""

from hypothesis import given, strategies as st

from selrace.trace_io import (
    Packet,
    SidebandRecord,
    decode_stream,
    encode_packet,
    read_sideband,
    read_streams,
    write_sideband,
    write_streams,
)

_u64 = st.integers(0, 2**64 - 1)
_u32 = st.integers(0, 2**32 - 1)

_packets = st.one_of(
    _u64.map(lambda v: Packet("TSC", v)),
    _u64.map(lambda v: Packet("CYC", v)),
    st.tuples(_u64, _u32).map(lambda t: Packet("PTW", t[0], t[1])),
)


@given(st.lists(_packets, max_size=50))
def test_stream_round_trip(packets):
    blob = b"".join(encode_packet(p) for p in packets)
    assert decode_stream(blob) == packets


def test_length_prefix_allows_skipping():
    # each record's length byte covers exactly its body
    packets = [Packet("TSC", 7), Packet("PTW", 99, 3), Packet("CYC", 1)]
    blob = b"".join(encode_packet(p) for p in packets)
    off = 0
    seen = 0
    while off < len(blob):
        off += 1 + blob[off]
        seen += 1
    assert off == len(blob) and seen == 3


def test_stream_files_round_trip(tmp_path):
    streams = [
        [Packet("TSC", 100), Packet("PTW", 512, 0)],
        [Packet("TSC", 200), Packet("CYC", 5), Packet("PTW", 2**63, 7)],
    ]
    write_streams(tmp_path, streams)
    assert read_streams(tmp_path) == streams
    assert (tmp_path / "cpu0.trace.json").exists()


@given(st.lists(st.tuples(_u64, _u32, _u32, _u32), max_size=30))
def test_sideband_round_trip(tmp_path_factory, raw):
    records = [SidebandRecord(*r) for r in raw]
    d = tmp_path_factory.mktemp("sb")
    write_sideband(d, records)
    assert read_sideband(d) == records
