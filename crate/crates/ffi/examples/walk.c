/* Steps through room A2 with the instructed opening moves and prints the states.
 * Build: cargo build -p lrs-ffi && cc walk.c -I../include ../../../target/debug/liblrs_ffi.a -lm -lpthread -ldl */
#include <stdio.h>
#include "lrs.h"

int main(void) {
    LrsEnv *env = NULL;
    if (lrs_env_open("a2", &env) != LRS_STATUS_OK) {
        char msg[256];
        lrs_last_error(msg, sizeof msg);
        fprintf(stderr, "open failed: %s\n", msg);
        return 1;
    }
    LrsState s;
    lrs_env_reset(env, 0, &s);
    const uint32_t moves[] = {3, 3, 3, 1, 1};
    for (size_t i = 0; i < sizeof moves / sizeof moves[0]; i++) {
        LrsStep step;
        if (lrs_env_step(env, moves[i], &step) != LRS_STATUS_OK) break;
        printf("(%u,%u) ladder=%d conveyor=%d\n", step.next_state.row, step.next_state.col, step.next_state.on_ladder, step.next_state.on_conveyor);
    }
    lrs_env_free(env);
    return 0;
}
