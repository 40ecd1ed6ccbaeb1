#include <stdio.h>
#include <string.h>
#include "tencomp.h"

#define CHECK(call)                                                   \
    do {                                                              \
        TcStatus s_ = (call);                                         \
        if (s_ != TC_STATUS_OK) {                                     \
            fprintf(stderr, "%s -> %d: %s\n", #call, s_, tc_last_error()); \
            return 1;                                                 \
        }                                                             \
    } while (0)

int main(void) {
    size_t dims[3] = {6, 6, 6};
    double values[216];
    for (size_t i = 0; i < 6; i++)
        for (size_t j = 0; j < 6; j++)
            for (size_t k = 0; k < 6; k++)
                values[(i * 6 + j) * 6 + k] = (0.2 + 0.1 * i) * (0.3 + 0.1 * j) * (0.1 + 0.1 * k);

    TcDense *truth = NULL;
    TcSparse *observed = NULL;
    TcModel *model = NULL;
    TcDense *pred = NULL;
    CHECK(tc_dense_new(dims, 3, values, 216, &truth));
    CHECK(tc_sample(truth, 0.3, 7, &observed));
    CHECK(tc_fit_cp(observed, 1, 0.0, 7, NULL, &model));
    CHECK(tc_model_reconstruct(model, &pred));

    double err = -1.0;
    CHECK(tc_mae(pred, truth, observed, &err));
    size_t got[3];
    CHECK(tc_dense_dims(pred, got, 3));

    TcDense *bad = NULL;
    if (tc_dense_new(dims, 3, values, 5, &bad) != TC_STATUS_INVALID_ARGUMENT || strlen(tc_last_error()) == 0 || bad != NULL) {
        fprintf(stderr, "length mismatch not reported\n");
        return 1;
    }

    printf("mae %.3e order %zu\n", err, tc_dense_order(truth));
    tc_dense_free(pred);
    tc_model_free(model);
    tc_sparse_free(observed);
    tc_dense_free(truth);
    return err < 1e-3 && got[2] == 6 ? 0 : 1;
}
