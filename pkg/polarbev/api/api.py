from polarbev.api.endpoints import ablate, bench, evaluate, train
from polarbev.api.routing import CommandRouter

command_router = CommandRouter()

command_router.include_router(train.router)
command_router.include_router(evaluate.router)
command_router.include_router(ablate.router)
command_router.include_router(bench.router)
