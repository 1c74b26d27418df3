"""Regenerate packs/bash-intro and its reference solutions.

Expected outputs are computed here in Python, independently of the Bash
reference solutions, so `shelljudge admin pack-validate --reference ...`
cross-checks the two.
"""

import json
import random
import shutil
from collections import Counter
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent
PACK = ROOT / "packs" / "bash-intro"
SOLUTIONS = ROOT / "packs" / "solutions" / "bash-intro"

DAYS = ["Mon", "Tue", "Wed", "Thu", "Fri", "Sat", "Sun"]


def lastb_lines(counts, rng):
    lines = []
    for user, n in counts.items():
        for _ in range(n):
            ip = ".".join(str(rng.randint(1, 254)) for _ in range(4))
            day = rng.choice(DAYS)
            date = rng.randint(1, 28)
            hh, mm = rng.randint(0, 23), rng.randint(0, 59)
            stamp = f"{day} Nov {date:2d} {hh:02d}:{mm:02d} - {hh:02d}:{mm:02d}  (00:00)"
            lines.append(f"{user:<8} ssh:notty    {ip:<16} {stamp}\n")
    rng.shuffle(lines)
    return "".join(lines)


def failed_login_report(log_text, threshold):
    counts = Counter(line.split()[0] for line in log_text.splitlines() if line.strip())
    kept = [(n, user) for user, n in counts.items() if n >= threshold]
    kept.sort(reverse=True)  # count desc, then name in reverse byte order
    return "".join(f"{n} {user}\n" for n, user in kept)


def even_sum(n):
    return sum(range(0, n + 1, 2))


def write_case(directory, case_id, args, out, stdin=None):
    directory.mkdir(parents=True, exist_ok=True)
    (directory / f"{case_id}.args").write_text("".join(a + "\n" for a in args))
    if stdin is not None:
        (directory / f"{case_id}.stdin").write_text(stdin)
    (directory / f"{case_id}.out").write_text(out)


def build():
    if PACK.exists():
        shutil.rmtree(PACK)
    rng = random.Random(20250612)
    (PACK / "problems").mkdir(parents=True)
    (PACK / "contest.json").write_text(json.dumps({
        "name": "Bash intro contest",
        "duration": 120,
        "wrong_attempt_penalty": 10,
        "hint_penalty": 15,
        "output_limit": 1048576,
        "problem_order": ["saludo", "pares", "lastb"],
    }, indent=2) + "\n")

    # 1. greeting: argv handling and quoting
    p = PACK / "problems" / "saludo"
    (p / "hints").mkdir(parents=True)
    (p / "problem.json").write_text(json.dumps({"title": "Greeting"}, indent=2) + "\n")
    (p / "statement.txt").write_text(
        "Write a script that receives a name as its first argument and prints\n"
        "\n    Hola, <name>!\n\n"
        "The name may contain spaces; print it exactly as received.\n\n"
        "Example:\n    $ ./programa.sh mundo\n    Hola, mundo!\n")
    (p / "hints" / "1.txt").write_text(
        'Positional parameters are $1, $2, ...; wrap them in double quotes ("$1")\n'
        "so that a name with spaces stays a single word.\n")
    write_case(p / "public", "01", ["mundo"], "Hola, mundo!\n")
    for i, name in enumerate(["Ada", "Grace Hopper", "  spaced  out", "Émilie"], 1):
        write_case(p / "hidden", f"{i:02d}", [name], f"Hola, {name}!\n")

    # 2. sum of even numbers: arithmetic and loops
    p = PACK / "problems" / "pares"
    (p / "hints").mkdir(parents=True)
    (p / "problem.json").write_text(json.dumps(
        {"title": "Sum of evens", "time_limit": 1000}, indent=2) + "\n")
    (p / "statement.txt").write_text(
        "Write a script that receives a non-negative integer N as its first\n"
        "argument and prints the sum of all even numbers between 0 and N,\n"
        "both included.\n\n"
        "Example:\n    $ ./programa.sh 6\n    12\n")
    (p / "hints" / "1.txt").write_text(
        "Arithmetic expansion: $(( expression )) evaluates integer expressions,\n"
        "e.g. s=$(( s + i )).\n")
    (p / "hints" / "2.txt").write_text(
        "Check the stop condition of your loop for odd values of N: a counter that\n"
        "grows by 2 can jump over N, so prefer -le over -ne.\n")
    write_case(p / "public", "01", ["6"], f"{even_sum(6)}\n")
    for i, n in enumerate([10, 7, 1, 100, 0], 1):
        write_case(p / "hidden", f"{i:02d}", [str(n)], f"{even_sum(n)}\n")

    # 3. failed logins report
    p = PACK / "problems" / "lastb"
    (p / "hints").mkdir(parents=True)
    (p / "problem.json").write_text(json.dumps(
        {"title": "Failed logins", "comparison_mode": "NewlineTolerant"}, indent=2) + "\n")
    (p / "statement.txt").write_text(
        "------ [STATEMENT] ------\n"
        "Your server records every failed login attempt. Find out which accounts\n"
        "are being targeted.\n\n"
        "Write a script that receives a number N and the path of a log of failed\n"
        "logins. Each log line looks like\n\n"
        "admin    ssh:notty    93.144.87.93     Fri Nov 10 14:56 - 14:56  (00:00)\n\n"
        "where the first column is the account name. Print every account with at\n"
        "least N failed attempts as `<attempts> <account>`, most attempts first;\n"
        "accounts with the same number of attempts go in reverse alphabetical order.\n\n"
        "------ [INPUT] ------\n"
        "$ ./programa.sh 7 {FILES}/lastb/intentos_acceso.txt\n\n"
        "------ [OUTPUT] ------\n"
        "41 root\n18 pi\n9 admin\n8 NL5xUDpV2xRa\n7 craft\n")
    (p / "hints" / "1.txt").write_text(
        "sort compares text by default. Use -n (or -h) for numeric order and -r to\n"
        "reverse it; see `man sort`. Keys can be chosen with -k.\n")
    (p / "hints" / "2.txt").write_text(
        "To walk over a variable holding several lines:\n\n"
        'lines=$(...)\nwhile read -r line; do\n    # use "$line"\n    :\ndone <<< "$lines"\n')

    public_counts = {"root": 41, "pi": 18, "admin": 9, "NL5xUDpV2xRa": 8, "craft": 7,
                     "ubuntu": 6, "git": 6, "postgres": 5, "oracle": 4, "guest": 3,
                     "user": 2, "ftp": 1, "test": 1}
    log_text = lastb_lines(public_counts, rng)
    (PACK / "files" / "lastb").mkdir(parents=True)
    (PACK / "files" / "lastb" / "intentos_acceso.txt").write_text(log_text)
    write_case(p / "public", "01", ["7", "{FILES}/lastb/intentos_acceso.txt"],
               failed_login_report(log_text, 7))

    hidden = [
        (5, {"root": 12, "admin": 12, "zeus": 7, "Zed": 7, "bob": 5, "alice": 5,
             "carol": 4, "dave": 1}),
        (3, {"oracle": 30, "mysql": 3, "MySQL": 3, "www-data": 3, "pi": 2, "x": 9}),
        (8, {"root": 9, "admin": 8, "guest": 2}),
    ]
    for i, (threshold, counts) in enumerate(hidden, 1):
        text = lastb_lines(counts, rng)
        write_case(p / "hidden", f"{i:02d}", [str(threshold), "/dev/stdin"],
                   failed_login_report(text, threshold), stdin=text)

    # reference and deliberately wrong solutions
    if SOLUTIONS.exists():
        shutil.rmtree(SOLUTIONS)
    SOLUTIONS.mkdir(parents=True)
    (SOLUTIONS / "saludo.sh").write_text('#!/bin/bash\necho "Hola, $1!"\n')
    (SOLUTIONS / "pares.sh").write_text(
        '#!/bin/bash\nhalf=$(( $1 / 2 ))\necho $(( half * (half + 1) ))\n')
    (SOLUTIONS / "pares_loop.sh").write_text(
        "#!/bin/bash\n# stops only when i hits N exactly: never for odd N\n"
        'i=0\ns=0\nwhile [ "$i" -ne "$1" ]; do\n    i=$(( i + 2 ))\n'
        "    s=$(( s + i ))\ndone\necho $s\n")
    (SOLUTIONS / "lastb.sh").write_text(
        "#!/bin/bash\n"
        "awk '{print $1}' \"$2\" | sort | uniq -c |\n"
        "    awk -v n=\"$1\" '$1 >= n {print $1, $2}' |\n"
        "    sort -k1,1nr -k2,2r\n")
    (SOLUTIONS / "lastb_ascending.sh").write_text(
        "#!/bin/bash\n"
        "awk '{print $1}' \"$2\" | sort | uniq -c |\n"
        "    awk -v n=\"$1\" '$1 >= n {print $1, $2}' |\n"
        "    sort -k1,1n -k2,2\n")


if __name__ == "__main__":
    build()
    print(f"wrote {PACK}")
