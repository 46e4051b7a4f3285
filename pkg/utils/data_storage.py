import json
import os
import tempfile

from utils.common import to_builtin
from utils.errors import OutputError
from utils.logger import logger


class ResultStorage:
    """Writes experiment and calibration outputs into one directory.

    Every file is written to a temporary sibling first and moved into place, so
    readers never see a partial file.
    """

    def __init__(self, out_dir):
        self.out_dir = out_dir
        self.written = []
        try:
            os.makedirs(out_dir, exist_ok=True)
        except OSError as e:
            raise OutputError(f"Cannot create output directory {out_dir}: {e}") from e

    def path(self, name):
        return os.path.join(self.out_dir, name)

    def _write_atomic(self, name, text):
        target = self.path(name)
        fd, tmp = None, None
        try:
            fd, tmp = tempfile.mkstemp(prefix=f".{name}.", suffix=".tmp", dir=self.out_dir)
            with os.fdopen(fd, "w", newline="") as f:
                fd = None
                f.write(text)
            os.replace(tmp, target)
            tmp = None
        except OSError as e:
            raise OutputError(f"Error writing {target}: {e}") from e
        finally:
            if fd is not None:
                os.close(fd)
            if tmp is not None and os.path.exists(tmp):
                os.remove(tmp)
        self.written.append(target)
        logger.info(f"Wrote {target}")
        return target

    def write_csv(self, name, frame, columns=None):
        frame = frame if columns is None else frame[list(columns)]
        # repr-style float formatting keeps shortest round-trip decimals
        return self._write_atomic(name, frame.to_csv(index=False, lineterminator="\n"))

    def write_trace_csv(self, name, trace, columns):
        """Trace CSV restricted to (and ordered by) the published column list"""
        return self.write_csv(name, trace, columns)

    def write_json(self, name, data):
        text = json.dumps(to_builtin(data), indent=2, sort_keys=False) + "\n"
        return self._write_atomic(name, text)
