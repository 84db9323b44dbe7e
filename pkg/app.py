import sys

from dotenv import load_dotenv

from qcs_sim.cli import run_cli

# Load environment variables
load_dotenv()

if __name__ == '__main__':
    sys.exit(run_cli(sys.argv[1:]))
