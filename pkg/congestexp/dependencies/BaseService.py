import argparse
import json
import sys
import traceback

from congestexp.errors import EXIT_OK, EXIT_USAGE, exit_code_for

"""
USAGE:

class NashCommand(BaseService):
    @classmethod
    def get_command_map(cls):
        return {"find-nash": {"required_args": ["game"], "method": cls.find_nash}}

    @classmethod
    def find_nash(cls, game, budget=None, **kwargs):
        return [c.to_safe_dict() for c in find_pure_nash(load_game(game))]

if __name__ == "__main__":
    sys.exit(NashCommand.run_cli())

# congestexp find-nash --game g1.json
# congestexp find-nash game=g1.json learner.mode=semi_bandit   (dotted keys nest)
"""


class UsageError(Exception):
    pass


class BaseService:

    @classmethod
    def get_command_map(cls):
        raise NotImplementedError("override get_command_map")

    @staticmethod
    def _expand_message_json(kwargs: dict) -> dict:
        # key=[[path.json]] inlines the file's JSON as the value of key
        for key in list(kwargs.keys()):
            val = kwargs[key]
            if not isinstance(val, str) or not (val.startswith("[[") and val.endswith(".json]]")):
                continue
            pth = val[2:-2].strip()
            with open(pth, "r") as f:
                kwargs[key] = json.load(f)
        return kwargs

    @classmethod
    def run(cls, **kwargs):
        kwargs = cls._expand_message_json(kwargs)
        command_map = cls.get_command_map()
        commands = kwargs.pop("__command", None)
        if not commands:
            raise UsageError(f"Need exactly one command, one of {sorted(command_map)}")
        if len(commands) != 1:
            raise UsageError(f"Exactly one command must be specified, got {commands}")
        cmd = commands[0]
        if cmd not in command_map:
            raise UsageError(f"Unknown command: {cmd} (expected one of {sorted(command_map)})")
        command_info = command_map[cmd]
        for arg in command_info.get("required_args", []):
            if arg not in kwargs:
                raise UsageError(f"Missing required argument: {arg} for command {cmd}")
        return command_info["method"](**kwargs)

    @staticmethod
    def _strip_enclosing_quotes(value: str) -> str:
        if isinstance(value, str) and len(value) >= 2 and value[0] == value[-1] and value[0] in ("'", '"', "`"):
            return value[1:-1]
        return value

    @classmethod
    def get_cli_options(cls):
        """Options declared to argparse; anything else is passed as ``key=value`` or ``--key=value``."""
        return []

    @classmethod
    def build_parser(cls) -> argparse.ArgumentParser:
        parser = argparse.ArgumentParser(prog=cls.__name__, description=cls.__doc__, allow_abbrev=False)
        parser.add_argument("command", nargs="?", help=f"one of {sorted(cls.get_command_map())}")
        for name in cls.get_cli_options():
            parser.add_argument(f"--{name}", dest=name, default=None)
        parser.add_argument("--v", "--verbose", dest="verbose", action="store_true")
        return parser

    @classmethod
    def parse_args(cls, argv=None):
        """
        Declared options go through argparse; leftover ``key=value`` and
        ``--key=value`` items become keyword arguments, and dotted keys nest:
        ``a.b=1`` -> {"a": {"b": "1"}}.
        """
        items = list(sys.argv[1:] if argv is None else argv)
        args, extras = cls.build_parser().parse_known_args(items)
        positional_args = [args.command] if args.command is not None else []
        kwargs = {name: getattr(args, name) for name in cls.get_cli_options() if getattr(args, name) is not None}
        for item in extras:
            body = item[2:] if item.startswith("--") else item
            if "=" in body:
                key, value = body.split("=", 1)
                kwargs[key] = cls._strip_enclosing_quotes(value)
            elif item.startswith("--"):
                raise UsageError(f"Unknown option {item}")
            else:
                positional_args.append(item)
        kwargs = cls.add_depth(kwargs)
        if args.verbose:
            kwargs["verbose"] = True
        if positional_args:
            kwargs["__command"] = positional_args
        return kwargs

    @classmethod
    def add_depth(cls, flat: dict, sep: str = ".") -> dict:
        nested = {}
        for flat_key, value in flat.items():
            if isinstance(value, str) and value.lower() in ("true", "false"):
                value = value.lower() == "true"
            keys = flat_key.split(sep)
            node = nested
            for key in keys[:-1]:
                node = node.setdefault(key, {})
            node[keys[-1]] = value
        return nested

    @classmethod
    def run_cli(cls, argv=None) -> int:
        """Runs one command, prints its JSON result and returns the process exit code."""
        verbose = False
        try:
            kwargs = cls.parse_args(argv)
            verbose = bool(kwargs.get("verbose", False))
            result = cls.run(**kwargs)
        except UsageError as e:
            print(f"usage error: {e}", file=sys.stderr)
            return EXIT_USAGE
        except SystemExit as e:
            # argparse exits on --help and on malformed options
            return EXIT_OK if not e.code else EXIT_USAGE
        except Exception as e:
            print(f"{type(e).__name__}: {e}", file=sys.stderr)
            if verbose:
                traceback.print_exc()
            return exit_code_for(e)
        if result is not None:
            print(json.dumps(result, indent=1, sort_keys=True, allow_nan=False))
        return EXIT_OK
