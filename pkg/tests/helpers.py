"""Small in-memory chain state for tests."""

from proxyscope.state import EmptyState


class World(EmptyState):
    """Code and storage from dicts; storage keyed by (address, slot)."""

    def __init__(self, code=None, storage=None):
        self.code = code or {}
        self.storage = storage or {}
        self.reads = 0

    def get_code(self, address, block):
        return self.code.get(address, b"")

    def get_storage_at(self, address, slot, block):
        self.reads += 1
        return self.storage.get((address, slot), 0)
