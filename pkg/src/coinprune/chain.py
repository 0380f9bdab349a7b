"""Block and transaction model with UTXO tracking.

The chain format follows Bitcoin where it matters for pruning: 80-byte
headers, HASH256 ids, a merkle tree over txids with odd-leaf
duplication, compact-bits difficulty encoding, and coinbase
transactions whose unlock field carries up to 100 bytes of arbitrary
data. Amounts are 64-bit integers in base units; fees are implicit and
must be claimed exactly by the coinbase.
"""

import struct
from dataclasses import dataclass, field
from typing import Iterator, NamedTuple

from .hashing import hash256
from . import scripts
from .scripts import CompressedTxOut, SpendContext

MAX_COINBASE_DATA = 100
COINBASE_TXID = b"\x00" * 32
COINBASE_VOUT = 0xFFFFFFFF

# compact encoding of target 2**252: roughly one nonce in 16 qualifies,
# cheap enough to mine thousands of blocks in-process
EASY_BITS = 0x20100000
DEFAULT_SUBSIDY = 50 * 100_000_000

_HEADER_FMT = "<I32s32sIII"
HEADER_SIZE = struct.calcsize(_HEADER_FMT)
assert HEADER_SIZE == 80

HEADER_RECORD_SIZE = 140


class ChainError(Exception):
    """Malformed structure or serialization."""


class BlockValidationError(ChainError):
    """A block failed consensus checks; the UTXO set is untouched."""


# --- difficulty -----------------------------------------------------------

def target_from_bits(bits: int) -> int:
    """Decode a compact-bits difficulty target."""
    exponent = bits >> 24
    mantissa = bits & 0x007FFFFF
    if bits & 0x00800000:
        raise ChainError("negative compact target")
    if exponent <= 3:
        return mantissa >> (8 * (3 - exponent))
    return mantissa << (8 * (exponent - 3))


def work_from_bits(bits: int) -> int:
    """Expected hashes to find a block under this target."""
    return (1 << 256) // (target_from_bits(bits) + 1)


# --- headers --------------------------------------------------------------

class BlockHeader(NamedTuple):
    version: int
    prev_hash: bytes
    merkle_root: bytes
    timestamp: int
    bits: int
    nonce: int

    def serialize(self) -> bytes:
        return struct.pack(_HEADER_FMT, self.version, self.prev_hash,
                           self.merkle_root, self.timestamp, self.bits,
                           self.nonce)

    @classmethod
    def parse(cls, data: bytes) -> "BlockHeader":
        if len(data) != HEADER_SIZE:
            raise ChainError(f"header must be {HEADER_SIZE} bytes")
        return cls(*struct.unpack(_HEADER_FMT, data))

    def block_id(self) -> bytes:
        return hash256(self.serialize())


def check_pow(header: BlockHeader) -> bool:
    return int.from_bytes(header.block_id(), "little") \
        <= target_from_bits(header.bits)


def mine_header(version: int, prev_hash: bytes, merkle_root: bytes,
                timestamp: int, bits: int, start_nonce: int = 0) -> BlockHeader:
    """Grind nonces until the header meets its own target."""
    target = target_from_bits(bits)
    buf = bytearray(struct.pack(_HEADER_FMT, version, prev_hash, merkle_root,
                                timestamp, bits, start_nonce))
    nonce = start_nonce
    while True:
        buf[76:80] = struct.pack("<I", nonce)
        if int.from_bytes(hash256(bytes(buf)), "little") <= target:
            return BlockHeader(version, prev_hash, merkle_root, timestamp,
                               bits, nonce)
        nonce = (nonce + 1) & 0xFFFFFFFF
        if nonce == start_nonce:
            raise ChainError("nonce space exhausted")


# --- transactions ---------------------------------------------------------

class TxInput(NamedTuple):
    prev_txid: bytes
    prev_vout: int
    unlock: bytes


class TxOutput(NamedTuple):
    amount: int
    script: bytes


class Transaction(NamedTuple):
    inputs: tuple
    outputs: tuple

    def is_coinbase(self) -> bool:
        return len(self.inputs) == 1 \
            and self.inputs[0].prev_txid == COINBASE_TXID \
            and self.inputs[0].prev_vout == COINBASE_VOUT

    def serialize(self) -> bytes:
        parts = [struct.pack("<H", len(self.inputs))]
        for txin in self.inputs:
            parts.append(struct.pack("<32sIH", txin.prev_txid, txin.prev_vout,
                                     len(txin.unlock)))
            parts.append(txin.unlock)
        parts.append(struct.pack("<H", len(self.outputs)))
        for txout in self.outputs:
            parts.append(struct.pack("<QH", txout.amount, len(txout.script)))
            parts.append(txout.script)
        return b"".join(parts)

    @classmethod
    def parse(cls, buf: bytes, offset: int = 0) -> tuple["Transaction", int]:
        try:
            (n_in,) = struct.unpack_from("<H", buf, offset)
            offset += 2
            inputs = []
            for _ in range(n_in):
                txid, vout, n = struct.unpack_from("<32sIH", buf, offset)
                offset += 38
                if offset + n > len(buf):
                    raise ChainError("truncated input unlock")
                inputs.append(TxInput(txid, vout, bytes(buf[offset:offset + n])))
                offset += n
            (n_out,) = struct.unpack_from("<H", buf, offset)
            offset += 2
            outputs = []
            for _ in range(n_out):
                amount, n = struct.unpack_from("<QH", buf, offset)
                offset += 10
                if offset + n > len(buf):
                    raise ChainError("truncated output script")
                outputs.append(TxOutput(amount, bytes(buf[offset:offset + n])))
                offset += n
        except struct.error as exc:
            raise ChainError(f"truncated transaction: {exc}") from None
        return cls(tuple(inputs), tuple(outputs)), offset

    def txid(self) -> bytes:
        return hash256(self.serialize())


def coinbase_tx(height: int, outputs: list[TxOutput], data: bytes) -> Transaction:
    """Build a coinbase. data starts with the LE32 height for uniqueness."""
    unlock = struct.pack("<I", height) + data
    if len(unlock) > MAX_COINBASE_DATA:
        raise ChainError("coinbase data above 100 bytes")
    return Transaction((TxInput(COINBASE_TXID, COINBASE_VOUT, unlock),),
                       tuple(outputs))


# --- blocks ---------------------------------------------------------------

def merkle_root(txids: list[bytes]) -> bytes:
    """Bitcoin-style merkle root: odd levels duplicate their last entry."""
    if not txids:
        raise ChainError("merkle tree needs at least one leaf")
    level = list(txids)
    while len(level) > 1:
        if len(level) & 1:
            level.append(level[-1])
        level = [hash256(level[i] + level[i + 1])
                 for i in range(0, len(level), 2)]
    return level[0]


class Block(NamedTuple):
    header: BlockHeader
    transactions: tuple

    def block_id(self) -> bytes:
        return self.header.block_id()

    def serialize(self) -> bytes:
        parts = [self.header.serialize(),
                 struct.pack("<I", len(self.transactions))]
        parts.extend(tx.serialize() for tx in self.transactions)
        return b"".join(parts)

    @classmethod
    def parse(cls, buf: bytes, offset: int = 0) -> tuple["Block", int]:
        header = BlockHeader.parse(bytes(buf[offset:offset + HEADER_SIZE]))
        offset += HEADER_SIZE
        (n_tx,) = struct.unpack_from("<I", buf, offset)
        offset += 4
        txs = []
        for _ in range(n_tx):
            tx, offset = Transaction.parse(buf, offset)
            txs.append(tx)
        return cls(header, tuple(txs)), offset


def make_block(prev_hash: bytes, transactions: list[Transaction],
               timestamp: int, bits: int, version: int = 1) -> Block:
    root = merkle_root([tx.txid() for tx in transactions])
    header = mine_header(version, prev_hash, root, timestamp, bits)
    return Block(header, tuple(transactions))


# --- chain parameters and genesis ----------------------------------------

@dataclass(frozen=True)
class ChainParams:
    bits: int = EASY_BITS
    subsidy: int = DEFAULT_SUBSIDY
    genesis_timestamp: int = 1600000000
    genesis_message: bytes = b"coinprune simulation genesis"


_GENESIS_CACHE: dict = {}


def genesis_block(params: ChainParams) -> Block:
    key = (params.bits, params.subsidy, params.genesis_timestamp,
           params.genesis_message)
    cached = _GENESIS_CACHE.get(key)
    if cached is None:
        out = TxOutput(params.subsidy,
                       scripts.p2pkh_script(hash256(params.genesis_message)[:20]))
        tx = coinbase_tx(0, [out], params.genesis_message[:96])
        cached = make_block(b"\x00" * 32, [tx], params.genesis_timestamp,
                            params.bits)
        _GENESIS_CACHE[key] = cached
    return cached


# --- UTXO set -------------------------------------------------------------

class UtxoEntry(NamedTuple):
    txid: bytes
    vout: int
    amount: int
    height: int
    coinbase: bool
    compressed: CompressedTxOut


class UtxoSet:
    """Mutable map of unspent outputs keyed by outpoint."""

    def __init__(self) -> None:
        self._entries: dict[tuple[bytes, int], UtxoEntry] = {}

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, outpoint: tuple[bytes, int]) -> bool:
        return outpoint in self._entries

    def get(self, outpoint: tuple[bytes, int]) -> UtxoEntry | None:
        return self._entries.get(outpoint)

    def add(self, entry: UtxoEntry) -> None:
        key = (entry.txid, entry.vout)
        if key in self._entries:
            raise ChainError("duplicate outpoint created")
        self._entries[key] = entry

    def remove(self, outpoint: tuple[bytes, int]) -> UtxoEntry:
        return self._entries.pop(outpoint)

    def entries(self) -> Iterator[UtxoEntry]:
        return iter(self._entries.values())

    def total_amount(self) -> int:
        return sum(e.amount for e in self._entries.values())

    def copy(self) -> "UtxoSet":
        dup = UtxoSet()
        dup._entries = dict(self._entries)
        return dup


def validate_and_apply_block(utxo: UtxoSet, block: Block, height: int,
                             prev_id: bytes, params: ChainParams) -> None:
    """Run full consensus checks and apply the block to the UTXO set.

    All checks complete before any mutation, so a raised
    BlockValidationError leaves the set untouched.
    """
    header = block.header
    if header.prev_hash != prev_id:
        raise BlockValidationError(f"height {height}: prev hash mismatch")
    if header.bits != params.bits:
        raise BlockValidationError(f"height {height}: wrong difficulty bits")
    if not check_pow(header):
        raise BlockValidationError(f"height {height}: insufficient proof of work")
    if not block.transactions:
        raise BlockValidationError(f"height {height}: empty block")
    txids = [tx.txid() for tx in block.transactions]
    if merkle_root(txids) != header.merkle_root:
        raise BlockValidationError(f"height {height}: merkle root mismatch")

    coinbase = block.transactions[0]
    if not coinbase.is_coinbase():
        raise BlockValidationError(f"height {height}: first tx not coinbase")
    if len(coinbase.inputs[0].unlock) > MAX_COINBASE_DATA:
        raise BlockValidationError(f"height {height}: oversized coinbase data")

    spent: set[tuple[bytes, int]] = set()
    created: dict[tuple[bytes, int], UtxoEntry] = {}
    fees = 0
    for tx, txid in zip(block.transactions[1:], txids[1:]):
        if tx.is_coinbase():
            raise BlockValidationError(f"height {height}: stray coinbase")
        if not tx.inputs or not tx.outputs:
            raise BlockValidationError(f"height {height}: empty tx {txid.hex()}")
        in_value = 0
        for txin in tx.inputs:
            outpoint = (txin.prev_txid, txin.prev_vout)
            if outpoint in spent:
                raise BlockValidationError(
                    f"height {height}: double spend of {txin.prev_txid.hex()}:{txin.prev_vout}")
            entry = created.get(outpoint)
            if entry is None:
                entry = utxo.get(outpoint)
            if entry is None:
                raise BlockValidationError(
                    f"height {height}: missing outpoint {txin.prev_txid.hex()}:{txin.prev_vout}")
            ctx = SpendContext(txin.prev_txid, txin.prev_vout)
            if not scripts.validate_spend(entry.compressed, txin.unlock, ctx):
                raise BlockValidationError(
                    f"height {height}: invalid unlock for {txin.prev_txid.hex()}:{txin.prev_vout}")
            spent.add(outpoint)
            in_value += entry.amount
        out_value = _check_outputs(tx, txid, height, created)
        if out_value > in_value:
            raise BlockValidationError(
                f"height {height}: tx {txid.hex()} creates value")
        fees += in_value - out_value

    coinbase_value = _check_outputs(coinbase, txids[0], height, created,
                                    coinbase=True)
    if coinbase_value != params.subsidy + fees:
        raise BlockValidationError(
            f"height {height}: coinbase claims {coinbase_value}, "
            f"expected {params.subsidy + fees}")
    for outpoint in created:
        if outpoint in utxo:
            raise BlockValidationError(
                f"height {height}: duplicate outpoint {outpoint[0].hex()}:{outpoint[1]}")

    for outpoint in spent:
        if outpoint in created:
            del created[outpoint]
        else:
            utxo.remove(outpoint)
    for entry in created.values():
        utxo.add(entry)


def _check_outputs(tx: Transaction, txid: bytes, height: int,
                   created: dict, coinbase: bool = False) -> int:
    total = 0
    for vout, txout in enumerate(tx.outputs):
        if not scripts.script_well_formed(txout.script):
            raise BlockValidationError(
                f"height {height}: malformed script in {txid.hex()}:{vout}")
        total += txout.amount
        if scripts.is_op_return(txout.script):
            continue  # provably unspendable, never enters the set
        created[(txid, vout)] = UtxoEntry(
            txid, vout, txout.amount, height, coinbase,
            scripts.compress(txout.script))
    return total


# --- persisted header records ---------------------------------------------

class PersistedHeaderRecord(NamedTuple):
    """What a pruned node keeps per block: 140 bytes, fixed."""
    block_id: bytes
    header: BlockHeader
    height: int
    cumulative_work: int
    tx_count: int
    timestamp: int

    def serialize(self) -> bytes:
        out = self.block_id + self.header.serialize() \
            + struct.pack("<I", self.height) \
            + self.cumulative_work.to_bytes(16, "little") \
            + struct.pack("<II", self.tx_count, self.timestamp)
        assert len(out) == HEADER_RECORD_SIZE
        return out

    @classmethod
    def parse(cls, data: bytes) -> "PersistedHeaderRecord":
        if len(data) != HEADER_RECORD_SIZE:
            raise ChainError(f"header record must be {HEADER_RECORD_SIZE} bytes")
        header = BlockHeader.parse(data[32:112])
        (height,) = struct.unpack_from("<I", data, 112)
        work = int.from_bytes(data[116:132], "little")
        tx_count, timestamp = struct.unpack_from("<II", data, 132)
        return cls(data[:32], header, height, work, tx_count, timestamp)


def header_record(block: Block, height: int, cumulative_work: int) -> PersistedHeaderRecord:
    return PersistedHeaderRecord(block.block_id(), block.header, height,
                                 cumulative_work, len(block.transactions),
                                 block.header.timestamp)


@dataclass
class HeaderIndex:
    """Flat-file index of consecutive header records from genesis."""
    records: list = field(default_factory=list)

    def append(self, record: PersistedHeaderRecord) -> None:
        if record.height != len(self.records):
            raise ChainError(
                f"record height {record.height} breaks contiguity at {len(self.records)}")
        self.records.append(record)

    def tip(self) -> PersistedHeaderRecord:
        if not self.records:
            raise ChainError("empty header index")
        return self.records[-1]

    def serialize(self) -> bytes:
        return b"".join(r.serialize() for r in self.records)

    @classmethod
    def parse(cls, data: bytes) -> "HeaderIndex":
        if len(data) % HEADER_RECORD_SIZE:
            raise ChainError("header index not a multiple of the record size")
        index = cls()
        for off in range(0, len(data), HEADER_RECORD_SIZE):
            index.append(PersistedHeaderRecord.parse(
                data[off:off + HEADER_RECORD_SIZE]))
        return index

    def write(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.serialize())

    @classmethod
    def read(cls, path) -> "HeaderIndex":
        with open(path, "rb") as fh:
            return cls.parse(fh.read())


def verify_headerchain(headers: list[BlockHeader],
                       params: ChainParams) -> tuple[bytes, int]:
    """Check genesis linkage and PoW; return (tip id, cumulative work)."""
    if not headers:
        raise ChainError("empty header chain")
    expected_genesis = genesis_block(params).header
    if headers[0] != expected_genesis:
        raise ChainError("position 0: not the configured genesis")
    work = 0
    prev_id = None
    for i, header in enumerate(headers):
        if i > 0 and header.prev_hash != prev_id:
            raise ChainError(f"position {i}: broken prev-hash link")
        if header.bits != params.bits:
            raise ChainError(f"position {i}: wrong difficulty bits")
        if not check_pow(header):
            raise ChainError(f"position {i}: insufficient proof of work")
        work += work_from_bits(header.bits)
        prev_id = header.block_id()
    return prev_id, work


def best_tip(chains: list[list[BlockHeader]], params: ChainParams) -> int:
    """Index of the valid chain with the most cumulative work."""
    best = -1
    best_work = -1
    for i, headers in enumerate(chains):
        try:
            _, work = verify_headerchain(headers, params)
        except ChainError:
            continue
        if work > best_work:
            best, best_work = i, work
    if best < 0:
        raise ChainError("no valid chain among candidates")
    return best


# --- block files ------------------------------------------------------------

BLOCK_FILE_MAGIC = b"CPB1"


def write_block_file(path, blocks: list[Block]) -> None:
    with open(path, "wb") as fh:
        fh.write(BLOCK_FILE_MAGIC)
        fh.write(struct.pack("<I", len(blocks)))
        for block in blocks:
            raw = block.serialize()
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)


def read_block_file(path) -> list[Block]:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != BLOCK_FILE_MAGIC:
        raise ChainError("not a block file")
    (count,) = struct.unpack_from("<I", data, 4)
    offset = 8
    blocks = []
    for _ in range(count):
        (size,) = struct.unpack_from("<I", data, offset)
        offset += 4
        block, end = Block.parse(data[offset:offset + size])
        if end != size:
            raise ChainError("trailing bytes inside block record")
        blocks.append(block)
        offset += size
    if offset != len(data):
        raise ChainError("trailing bytes after final block")
    return blocks
