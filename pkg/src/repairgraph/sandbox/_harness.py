# Runs inside the sandbox interpreter. Must stay self-contained: stdlib only,
# no imports from the host package.
import json
import os
import sys
import traceback

FRAME_LIMIT = 40
# scratch dirs are random; drop them so identical failures read identically
SCRATCH_PREFIX = os.path.dirname(os.path.abspath(__file__)) + os.sep


def _innermost(tb, filename):
    line = function = None
    for frame in traceback.extract_tb(tb):
        if frame.filename == filename:
            line, function = frame.lineno, frame.name
    return line, function


def _error(exc, filename, syntax=False):
    text = "".join(traceback.format_exception(type(exc), exc, exc.__traceback__, limit=-FRAME_LIMIT))
    text = text.replace(SCRATCH_PREFIX, "")
    if syntax:
        return {
            "error_type": type(exc).__name__,
            "message": exc.msg or str(exc),
            "line": exc.lineno,
            "function": None,
            "traceback_text": text,
        }
    line, function = _innermost(exc.__traceback__, filename)
    return {
        "error_type": type(exc).__name__,
        "message": str(exc),
        "line": line,
        "function": function,
        "traceback_text": text,
    }


def main():
    request_path = sys.argv[1]
    with open(request_path, encoding="utf-8") as fh:
        request = json.load(fh)
    os.remove(request_path)
    marker = "<<" + request.pop("nonce") + ">>"
    envelope_fd = os.dup(1)

    def emit(payload):
        try:
            sys.stdout.flush()
        except Exception:
            pass
        body = json.dumps(payload, ensure_ascii=True, allow_nan=False)
        os.write(envelope_fd, ("\n%s\n%s\n%s\n" % (marker, body, marker)).encode("ascii"))

    filename = request["source_file"]
    with open(filename, encoding="utf-8") as fh:
        source = fh.read()

    try:
        code = compile(source, filename, "exec")
    except (SyntaxError, ValueError) as exc:
        if isinstance(exc, SyntaxError):
            emit({"status": "syntax_error", "error": _error(exc, filename, syntax=True)})
        else:
            emit({"status": "syntax_error", "error": _error(exc, filename)})
        return

    namespace = {"__name__": "candidate", "__file__": filename, "__builtins__": __builtins__}
    try:
        exec(code, namespace)
        entry = namespace.get(request["entry"])
        if not callable(entry):
            emit({
                "status": "exception",
                "error": {
                    "error_type": "EntryNotFound",
                    "message": "no callable named %r defined" % request["entry"],
                    "line": None,
                    "function": None,
                    "traceback_text": "",
                },
            })
            return
        result = entry(*request["args"])
    except (Exception, SystemExit) as exc:
        emit({"status": "exception", "error": _error(exc, filename)})
        return

    try:
        json.dumps(result, allow_nan=False)
    except (TypeError, ValueError) as exc:
        emit({
            "status": "exception",
            "error": {
                "error_type": "UnserializableReturn",
                "message": "%s: %s" % (type(result).__name__, exc),
                "line": None,
                "function": request["entry"],
                "traceback_text": "",
            },
        })
        return
    emit({"status": "success", "return_value": result})


if __name__ == "__main__":
    main()
