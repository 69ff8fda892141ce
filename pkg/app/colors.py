# colors.py

from colorama import Fore, Style, init

# autoreset=True appends Style.RESET_ALL to every print.
init(autoreset=True)

HEADING = Fore.CYAN + Style.BRIGHT   # experiment banners
PASS = Fore.GREEN + Style.BRIGHT     # validate check passed
FAIL = Fore.RED + Style.BRIGHT       # validate check failed
VALUE = Fore.YELLOW                  # headline numbers
PATH = Fore.MAGENTA                  # files written
ERROR = Fore.RED                     # diagnostics on stderr
SEPARATOR = Fore.WHITE + Style.DIM
